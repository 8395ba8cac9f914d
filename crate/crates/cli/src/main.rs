use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hjq::expcli::{
    grid_solve, qlearn_tabular, riccati_report, run_ablation, run_experiment, AblationKind, Benchmark,
    ExperimentConfig, GridSolveConfig, TabularRun,
};
use hjq::grid::QSyncSchedule;
use hjq::hjdqn::Smoothing;
use hjq::Error;

#[derive(Parser)]
#[command(name = "hjq", version, about = "Continuous-time Q-learning from HJB equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Riccati solution of an LQ benchmark (`--seed` picks the instance).
    Riccati {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Value iteration on the 1-D clipped LQ grid (`--steps` caps iterations).
    GridSolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridFlags,
    },
    /// Synchronous HJ Q-learning on the 1-D clipped LQ grid for `--steps` sweeps.
    QlearnTabular {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridFlags,
        /// `harmonic` or a constant rate in [0, 1].
        #[arg(long, default_value = "1")]
        schedule: String,
    },
    /// Train HJ DQN (`--steps` sets total environment steps).
    TrainHjdqn {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Rerun an experiment varying one field.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// double-q, h, lipschitz or smoothing
        #[arg(long)]
        kind: String,
        /// Values for the numeric sweeps, comma separated.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
}

#[derive(Args, Clone, Default)]
struct GridFlags {
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    lipschitz: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    system_seed: Option<u64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    lipschitz: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    step_discount: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    polyak: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    episode_len: Option<usize>,
    /// Sets total steps to `episodes × episode_len`.
    #[arg(long)]
    episodes: Option<usize>,
    /// none, tanh or rational
    #[arg(long)]
    smoothing: Option<String>,
    #[arg(long)]
    double_q: Option<bool>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    eval_horizon: Option<f64>,
}

fn experiment_config(common: &Common, f: &TrainFlags) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(b) = &f.benchmark {
        cfg.benchmark = b.parse::<Benchmark>()?;
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = f.$field.clone() {
                cfg.$field = v;
            }
        )*};
    }
    set!(dim, system_seed, h, lipschitz, step_discount, lr, polyak, noise_std, buffer_capacity, batch_size, episode_len, double_q, hidden, eval_interval, eval_horizon);
    if f.gamma.is_some() {
        cfg.gamma = f.gamma;
    }
    if let Some(s) = &f.smoothing {
        cfg.smoothing = s.parse::<Smoothing>().map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Some(e) = f.episodes {
        cfg.total_steps = e * cfg.episode_len;
    }
    if let Some(s) = common.steps {
        cfg.total_steps = s;
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn grid_config(common: &Common, f: &GridFlags) -> Result<GridSolveConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => GridSolveConfig::load(path)?,
        None => GridSolveConfig::default(),
    };
    if let Some(v) = f.h {
        cfg.h = v;
    }
    if let Some(v) = f.lipschitz {
        cfg.lipschitz = v;
    }
    if let Some(v) = f.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = f.resolution {
        cfg.resolution = v;
    }
    if let Some(v) = f.tol {
        cfg.tol = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn report_tabular(run: &TabularRun, dir: &Path) -> Result<(), Error> {
    write(dir, "residuals.csv", &run.csv())?;
    let last = run.rows.last();
    println!(
        "{} iterations, final residual {:e}, error to fixed point {:e}",
        run.rows.len(),
        last.map_or(0.0, |r| r.sup_residual),
        last.map_or(0.0, |r| r.sup_error_to_fixed_point)
    );
    Ok(())
}

fn parse_schedule(s: &str) -> Result<QSyncSchedule<f64>, Error> {
    if s == "harmonic" {
        return Ok(QSyncSchedule::Harmonic);
    }
    s.parse::<f64>()
        .map(QSyncSchedule::Constant)
        .map_err(|_| Error::Config(format!("schedule `{s}` is neither `harmonic` nor a number")))
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Riccati { common, dim } => {
            let flags = TrainFlags {
                dim,
                system_seed: common.seed,
                ..Default::default()
            };
            let common = Common { seed: None, ..common };
            let cfg = experiment_config(&common, &flags)?;
            let report = riccati_report(&cfg)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            write(&out_dir(&common), "riccati.json", &(text.clone() + "\n"))?;
            println!("{text}");
            Ok(true)
        }
        Command::GridSolve { common, grid } => {
            let mut cfg = grid_config(&common, &grid)?;
            if let Some(s) = common.steps {
                cfg.max_iter = s;
            }
            report_tabular(&grid_solve(&cfg)?, &out_dir(&common))?;
            Ok(true)
        }
        Command::QlearnTabular { common, grid, schedule } => {
            let cfg = grid_config(&common, &grid)?;
            let schedule = parse_schedule(&schedule)?;
            let run = qlearn_tabular(&cfg, &schedule, common.steps.unwrap_or(200))?;
            report_tabular(&run, &out_dir(&common))?;
            Ok(true)
        }
        Command::TrainHjdqn { common, train } => {
            let cfg = experiment_config(&common, &train)?;
            let res = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&res.summary).expect("summary serializes"));
            Ok(res.curves.iter().all(|c| !c.diverged))
        }
        Command::Ablate {
            common,
            train,
            kind,
            values,
        } => {
            let cfg = experiment_config(&common, &train)?;
            let kind = kind.parse::<AblationKind>()?;
            let mut ok = true;
            for (variant, res) in run_ablation(&cfg, kind, &values)? {
                println!(
                    "{}: median final {} (initial {})",
                    variant.name, res.summary.median_final, res.summary.median_initial
                );
                ok &= res.curves.iter().all(|c| !c.diverged);
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: at least one run diverged");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidArgument(_) => 2,
                Error::Diverged(_) | Error::NonFinite(_) | Error::NoConvergence { .. } => 3,
                _ => 1,
            })
        }
    }
}
