use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{make_random_lq, ControlSystem, LinearQuadratic};
use crate::error::{Error, Result};
use crate::grid::Lq1d;
use crate::hjdqn::{gamma_for_step_discount, Smoothing, TrainConfig, LQ_STEP_DISCOUNT};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Benchmark {
    /// Random unstable linear-quadratic system of dimension `dim`.
    #[serde(rename = "lq")]
    Lq,
    /// Same system with additive Brownian noise `diffusion·I`.
    #[serde(rename = "lq-sde")]
    LqSde,
    /// One-dimensional LQ problem saturated into `[−1, 1]²`.
    #[serde(rename = "grid-lq1d")]
    GridLq1d,
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Lq => "lq",
            Benchmark::LqSde => "lq-sde",
            Benchmark::GridLq1d => "grid-lq1d",
        }
    }

    /// Whether the Riccati cost-ratio metric applies.
    pub fn is_lq(self) -> bool {
        matches!(self, Benchmark::Lq | Benchmark::LqSde)
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lq" => Ok(Benchmark::Lq),
            "lq-sde" => Ok(Benchmark::LqSde),
            "grid-lq1d" => Ok(Benchmark::GridLq1d),
            other => Err(Error::Config(format!(
                "unknown benchmark `{other}` (expected lq, lq-sde or grid-lq1d)"
            ))),
        }
    }
}

/// Everything needed to reproduce a multi-seed training run. Stored as a
/// flat TOML file; absent keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    /// State dimension (`d`; the LQ benchmarks use `d` actions as well).
    pub dim: usize,
    /// Seed of the benchmark instance, shared by all training seeds.
    pub system_seed: u64,
    /// Additive noise scale for `lq-sde`.
    pub diffusion: f64,
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_states: usize,
    pub eval_seed: u64,
    /// Seconds simulated per evaluation rollout.
    pub eval_horizon: f64,
    /// Write measured wall-clock seconds; when false the column is zero so
    /// that repeated runs produce identical files.
    pub record_wallclock: bool,
    pub output: PathBuf,

    pub h: f64,
    pub lipschitz: f64,
    /// Per-step discount `e^{−γh}`; ignored when `gamma` is set.
    pub step_discount: f64,
    pub gamma: Option<f64>,
    pub lr: f64,
    pub polyak: f64,
    pub noise_std: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub episode_len: usize,
    pub smoothing: Smoothing,
    pub double_q: bool,
    pub hidden: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::<f64>::default();
        Self {
            benchmark: Benchmark::Lq,
            dim: 2,
            system_seed: 0,
            diffusion: 0.1,
            seeds: vec![0, 1, 2, 3, 4],
            total_steps: 50_000,
            eval_interval: 1000,
            eval_states: 10,
            eval_seed: 1_000_003,
            eval_horizon: 20.0,
            record_wallclock: true,
            output: PathBuf::from("runs"),
            h: train.h,
            lipschitz: train.lipschitz,
            step_discount: LQ_STEP_DISCOUNT,
            gamma: None,
            lr: train.lr,
            polyak: train.polyak,
            noise_std: train.noise_std,
            buffer_capacity: train.buffer_capacity,
            batch_size: train.batch_size,
            episode_len: train.episode_len,
            smoothing: train.smoothing,
            double_q: train.double_q,
            hidden: train.hidden,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Continuous discount rate in effect.
    pub fn effective_gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| gamma_for_step_discount(self.step_discount, self.h))
    }

    /// Episodes needed to cover `total_steps`.
    pub fn episodes(&self) -> usize {
        if self.episode_len == 0 {
            0
        } else {
            self.total_steps.div_ceil(self.episode_len)
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig<f64> {
        TrainConfig {
            h: self.h,
            lipschitz: self.lipschitz,
            gamma: self.effective_gamma(),
            lr: self.lr,
            polyak: self.polyak,
            noise_std: self.noise_std,
            buffer_capacity: self.buffer_capacity,
            batch_size: self.batch_size,
            episode_len: self.episode_len,
            episodes: self.episodes(),
            smoothing: self.smoothing,
            double_q: self.double_q,
            hidden: self.hidden.clone(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.benchmark == Benchmark::GridLq1d && self.dim != 1 {
            return bad(format!("benchmark grid-lq1d is one-dimensional, got dim = {}", self.dim));
        }
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive".into());
        }
        if self.eval_states == 0 {
            return bad("eval_states must be positive".into());
        }
        if !(self.eval_horizon > 0.0 && self.eval_horizon.is_finite()) {
            return bad(format!("eval_horizon = {} must be positive", self.eval_horizon));
        }
        if self.episode_len == 0 && self.total_steps > 0 {
            return bad("episode_len must be positive".into());
        }
        if self.gamma.is_none() && !(self.step_discount > 0.0 && self.step_discount <= 1.0) {
            return bad(format!("step_discount = {} must lie in (0, 1]", self.step_discount));
        }
        if !(self.diffusion >= 0.0 && self.diffusion.is_finite()) {
            return bad(format!("diffusion = {} must be non-negative", self.diffusion));
        }
        self.train_config(0).validate().map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::Config(msg),
            other => other,
        })
    }

    /// Builds the benchmark system.
    pub fn system(&self) -> Result<Box<dyn ControlSystem<f64>>> {
        Ok(match self.benchmark {
            Benchmark::Lq => Box::new(self.lq_system()?),
            Benchmark::LqSde => Box::new(self.lq_system()?),
            Benchmark::GridLq1d => Box::new(
                Lq1d {
                    gamma: self.effective_gamma(),
                    ..Lq1d::default()
                }
                .system(),
            ),
        })
    }

    /// The linear-quadratic instance behind `lq` and `lq-sde`.
    pub fn lq_system(&self) -> Result<LinearQuadratic<f64>> {
        if !self.benchmark.is_lq() {
            return Err(Error::Config(format!("benchmark {} is not a random LQ problem", self.benchmark)));
        }
        let mut rng = Rng::new(self.system_seed);
        let sys = make_random_lq(self.dim, self.effective_gamma(), &mut rng)?;
        if self.benchmark == Benchmark::LqSde {
            return sys.with_noise(Matrix::identity(self.dim).scale(self.diffusion));
        }
        Ok(sys)
    }
}
