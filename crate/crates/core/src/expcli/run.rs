use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{Benchmark, ExperimentConfig};
use crate::critic::MlpCritic;
use crate::dynamics::{BoxSet, ControlSystem, LinearQuadratic};
use crate::error::{Error, Result};
use crate::hjdqn::{greedy_increment, rollout_greedy, Episode, Learner, ReplayBuffer, StepMode, TrainConfig};
use crate::lq_oracle::{evaluate_policy_cost, optimal_cost, solve_care, RiccatiSolution};
use crate::numerics::Rng;

/// One evaluation of the greedy policy during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub env_step: usize,
    /// Mean discounted return of the greedy rollouts.
    pub eval_return: f64,
    /// Mean `log₁₀(cost / optimal cost)`; LQ benchmarks only, `+∞` if any
    /// rollout diverged.
    pub cost_ratio_log10: Option<f64>,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
    /// Set when the run stopped early.
    pub error: Option<String>,
    pub diverged: bool,
}

impl SeedCurve {
    /// Headline metric of a point: cost ratio when available, else return.
    fn metric(p: &CurvePoint) -> f64 {
        p.cost_ratio_log10.unwrap_or(p.eval_return)
    }

    pub fn initial_metric(&self) -> Option<f64> {
        self.points.first().map(Self::metric)
    }

    /// Final metric; `+∞` for runs that stopped with an error.
    pub fn final_metric(&self) -> Option<f64> {
        if self.error.is_some() {
            return Some(f64::INFINITY);
        }
        self.points.last().map(Self::metric)
    }
}

/// Fixed evaluation protocol shared by every seed of an experiment.
pub struct Evaluator {
    sys: Box<dyn ControlSystem<f64>>,
    lq: Option<(LinearQuadratic<f64>, RiccatiSolution<f64>)>,
    pub states: Vec<Vec<f64>>,
    horizon: f64,
}

impl Evaluator {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let sys = cfg.system()?;
        let lq = if cfg.benchmark.is_lq() {
            let lq = cfg.lq_system()?;
            let sol = solve_care(&lq)?;
            Some((lq, sol))
        } else {
            None
        };
        let mut rng = Rng::new(cfg.eval_seed);
        let states = (0..cfg.eval_states).map(|_| sys.state_box().sample(&mut rng)).collect();
        Ok(Self {
            sys,
            lq,
            states,
            horizon: cfg.eval_horizon,
        })
    }

    pub fn system(&self) -> &dyn ControlSystem<f64> {
        self.sys.as_ref()
    }

    pub fn riccati(&self) -> Option<&RiccatiSolution<f64>> {
        self.lq.as_ref().map(|(_, sol)| sol)
    }

    /// Mean greedy return and, for LQ problems, mean log cost ratio, with the
    /// initial action at the origin.
    pub fn evaluate(&self, critic: &MlpCritic<f64>, cfg: &TrainConfig<f64>) -> Result<(f64, Option<f64>)> {
        let a0 = vec![0.0; self.sys.action_dim()];
        let mut ret = 0.0;
        for x0 in &self.states {
            let roll = rollout_greedy(self.sys.as_ref(), critic, x0, &a0, cfg, self.horizon)?;
            ret -= roll.discounted_cost;
        }
        ret /= self.states.len() as f64;
        let ratio = match &self.lq {
            None => None,
            Some((lq, sol)) => {
                let boxed: &BoxSet<f64> = lq.action_box();
                let mut acc = 0.0;
                for x0 in &self.states {
                    let policy = |x: &[f64], a: &[f64]| {
                        let inc = greedy_increment(critic, x, a, cfg);
                        let next: Vec<f64> = a.iter().zip(&inc).map(|(u, d)| u + d).collect();
                        boxed.clip(&next)
                    };
                    let cost = evaluate_policy_cost(lq, policy, x0, &a0, cfg.h, self.horizon)?;
                    acc += (cost / optimal_cost(sol, x0)).log10();
                }
                let mean = acc / self.states.len() as f64;
                Some(if mean.is_nan() { f64::INFINITY } else { mean })
            }
        };
        Ok((if ret.is_nan() { f64::NEG_INFINITY } else { ret }, ratio))
    }
}

/// Trains one seed, evaluating at step 0, every `eval_interval` steps and at
/// the end.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, eval: &Evaluator) -> SeedCurve {
    let train = cfg.train_config(seed);
    let sys = eval.system();
    let mode = if cfg.benchmark == Benchmark::LqSde {
        StepMode::Stochastic
    } else {
        StepMode::Exact
    };
    let start = Instant::now();
    let clock = || {
        if cfg.record_wallclock {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };
    let mut rng = Rng::new(seed);
    let mut learner = Learner::new(sys.state_dim(), sys.action_dim(), &train, &mut rng);
    let mut curve = SeedCurve {
        seed,
        points: Vec::new(),
        error: None,
        diverged: false,
    };
    let record = |step: usize, learner: &Learner<f64>, curve: &mut SeedCurve| -> Result<()> {
        let (eval_return, cost_ratio_log10) = eval.evaluate(learner.online(), &train)?;
        curve.points.push(CurvePoint {
            env_step: step,
            eval_return,
            cost_ratio_log10,
            wallclock_s: clock(),
        });
        Ok(())
    };
    let outcome = (|| -> Result<()> {
        record(0, &learner, &mut curve)?;
        let mut buffer = ReplayBuffer::new(train.buffer_capacity, train.h)?;
        let mut episode: Option<Episode<f64>> = None;
        for step in 1..=cfg.total_steps {
            let ep = match &mut episode {
                Some(ep) if ep.step < train.episode_len => ep,
                slot => slot.insert(Episode::begin(sys, &mut rng)),
            };
            ep.advance(sys, &mut learner, &mut buffer, &train, mode, &mut rng)?;
            if step % cfg.eval_interval == 0 || step == cfg.total_steps {
                record(step, &learner, &mut curve)?;
            }
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        curve.diverged = matches!(e, Error::Diverged(_) | Error::NonFinite(_));
        curve.error = Some(e.to_string());
    }
    curve
}

/// Aggregate of the final metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub benchmark: String,
    pub metric: String,
    pub seeds: Vec<u64>,
    pub initial: Vec<f64>,
    #[serde(rename = "final")]
    pub final_values: Vec<f64>,
    pub median_initial: f64,
    pub median_final: f64,
    /// Half the sample standard deviation of the final values.
    pub half_std_final: f64,
    pub failures: Vec<(u64, String)>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn half_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    0.5 * var.sqrt()
}

pub fn summarize(cfg: &ExperimentConfig, curves: &[SeedCurve]) -> Summary {
    let initial: Vec<f64> = curves.iter().filter_map(SeedCurve::initial_metric).collect();
    let final_values: Vec<f64> = curves.iter().filter_map(SeedCurve::final_metric).collect();
    Summary {
        benchmark: cfg.benchmark.name().into(),
        metric: if cfg.benchmark.is_lq() { "cost_ratio_log10" } else { "eval_return" }.into(),
        seeds: curves.iter().map(|c| c.seed).collect(),
        median_initial: median(&initial),
        median_final: median(&final_values),
        half_std_final: half_std(&final_values),
        initial,
        final_values,
        failures: curves
            .iter()
            .filter_map(|c| c.error.clone().map(|e| (c.seed, e)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub curves: Vec<SeedCurve>,
    pub summary: Summary,
}

/// Runs every seed without touching the filesystem.
pub fn run_curves(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let eval = Evaluator::new(cfg)?;
    let curves: Vec<SeedCurve> = cfg.seeds.iter().map(|&s| run_seed(cfg, s, &eval)).collect();
    let summary = summarize(cfg, &curves);
    Ok(ExperimentResult { curves, summary })
}

/// Runs every seed and writes the per-seed CSVs, `meta.json` and
/// `summary.json` into `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let result = run_curves(cfg)?;
    write_csv(&result.curves, &cfg.output)?;
    write_meta(cfg, &cfg.output)?;
    let summary = serde_json::to_string_pretty(&result.summary).expect("summary serializes");
    std::fs::write(cfg.output.join("summary.json"), summary + "\n")?;
    Ok(result)
}

pub const CSV_HEADER: &str = "env_step,eval_return,cost_ratio_log10,wallclock_s";

fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        "inf".into()
    }
}

/// CSV text of one learning curve.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in points {
        let ratio = p.cost_ratio_log10.map(fmt_float).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{}",
            p.env_step,
            fmt_float(p.eval_return),
            ratio,
            fmt_float(p.wallclock_s)
        )
        .unwrap();
    }
    out
}

/// Writes `curve_seed<k>.csv` per seed into `dir`.
pub fn write_csv(curves: &[SeedCurve], dir: &Path) -> Result<Vec<PathBuf>> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("no curves to write".into()));
    }
    std::fs::create_dir_all(dir)?;
    curves
        .iter()
        .map(|c| {
            let path = dir.join(format!("curve_seed{}.csv", c.seed));
            std::fs::write(&path, curve_csv(&c.points))?;
            Ok(path)
        })
        .collect()
}

pub const DISCOUNT_NOTE: &str = "targets and returns weight step k by (1 - gamma*h)^k; gamma = -ln(step_discount)/h, \
so (1 - gamma*h) matches step_discount to O((gamma*h)^2). Riccati costs and the cost ratio use exp(-gamma*k*h).";

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// `meta.json`: the full config (structured and as TOML), the evaluation
/// states, version information and the discount convention.
pub fn write_meta(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let eval = Evaluator::new(cfg)?;
    let meta = serde_json::json!({
        "config": cfg,
        "config_toml": cfg.to_toml_string(),
        "effective_gamma": cfg.effective_gamma(),
        "eval_seed": cfg.eval_seed,
        "eval_initial_states": eval.states,
        "eval_initial_action": "zero",
        "git_describe": git_describe(),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "discount_convention": DISCOUNT_NOTE,
    });
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(benchmark: Benchmark, dim: usize) -> ExperimentConfig {
        ExperimentConfig {
            benchmark,
            dim,
            seeds: vec![1, 2],
            total_steps: 60,
            eval_interval: 25,
            eval_states: 3,
            eval_horizon: 1.0,
            batch_size: 16,
            buffer_capacity: 100,
            episode_len: 20,
            hidden: vec![8],
            record_wallclock: false,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_give_initial_point_only() {
        let cfg = ExperimentConfig {
            total_steps: 0,
            ..tiny(Benchmark::Lq, 2)
        };
        let res = run_curves(&cfg).unwrap();
        for c in &res.curves {
            assert_eq!(c.points.len(), 1);
            assert_eq!(c.points[0].env_step, 0);
            assert!(c.points[0].cost_ratio_log10.is_some());
        }
    }

    #[test]
    fn eval_points_and_determinism() {
        let cfg = tiny(Benchmark::Lq, 2);
        let a = run_curves(&cfg).unwrap();
        let steps: Vec<usize> = a.curves[0].points.iter().map(|p| p.env_step).collect();
        assert_eq!(steps, vec![0, 25, 50, 60]);
        let b = run_curves(&cfg).unwrap();
        for (x, y) in a.curves.iter().zip(&b.curves) {
            assert_eq!(curve_csv(&x.points), curve_csv(&y.points));
        }
        assert_ne!(curve_csv(&a.curves[0].points), curve_csv(&a.curves[1].points));
    }

    #[test]
    fn other_benchmarks_run() {
        let grid = run_curves(&tiny(Benchmark::GridLq1d, 1)).unwrap();
        assert!(grid.curves[0].points[0].cost_ratio_log10.is_none());
        assert_eq!(grid.summary.metric, "eval_return");
        let sde = run_curves(&tiny(Benchmark::LqSde, 1)).unwrap();
        assert!(sde.curves.iter().all(|c| c.error.is_none()));
    }

    #[test]
    fn csv_format() {
        let p = CurvePoint {
            env_step: 0,
            eval_return: -1.5,
            cost_ratio_log10: Some(f64::NAN),
            wallclock_s: 0.0,
        };
        assert_eq!(curve_csv(&[p]), "env_step,eval_return,cost_ratio_log10,wallclock_s\n0,-1.5,inf,0\n");
        let q = CurvePoint {
            cost_ratio_log10: None,
            ..p
        };
        assert_eq!(curve_csv(&[q]).lines().nth(1).unwrap(), "0,-1.5,,0");
    }

    #[test]
    fn files_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            output: dir.path().join("run"),
            total_steps: 0,
            ..tiny(Benchmark::Lq, 1)
        };
        run_experiment(&cfg).unwrap();
        let csv = std::fs::read_to_string(cfg.output.join("curve_seed1.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(cfg.output.join("meta.json")).unwrap()).unwrap();
        let back = ExperimentConfig::from_toml_str(meta["config_toml"].as_str().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(meta["discount_convention"].as_str().unwrap().contains("gamma"));
        assert!(cfg.output.join("summary.json").exists());
        assert!(write_csv(&[], dir.path()).is_err());
    }

    #[test]
    fn median_and_spread() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, 0.0]), 1.0);
        assert!((half_std(&[1.0, 3.0]) - 0.5 * 2f64.sqrt()).abs() < 1e-15);
    }
}
