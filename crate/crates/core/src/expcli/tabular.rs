use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::{
    residual_csv, run_q_learning, value_iterate, BellmanOperator, GridQ, Lq1d, QSyncSchedule, ResidualRow,
    DEFAULT_BALL_DIRECTIONS,
};
use crate::lq_oracle::{care_residual, solve_care};

/// Riccati ground truth of an LQ benchmark, as written by `riccati`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiReport {
    pub dim: usize,
    pub gamma: f64,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub gain: Vec<Vec<f64>>,
    pub residual: f64,
    pub steps: usize,
}

fn rows(m: &crate::numerics::Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn riccati_report(cfg: &ExperimentConfig) -> Result<RiccatiReport> {
    let sys = cfg.lq_system()?;
    let sol = solve_care(&sys)?;
    Ok(RiccatiReport {
        dim: cfg.dim,
        gamma: sys.gamma,
        a: rows(&sys.a),
        b: rows(&sys.b),
        p: rows(&sol.p),
        gain: rows(&sol.gain),
        residual: care_residual(&sys, &sol.p)?,
        steps: sol.steps,
    })
}

/// Settings of the tabular runs on the one-dimensional clipped LQ benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSolveConfig {
    pub h: f64,
    pub lipschitz: f64,
    pub gamma: f64,
    /// Nodes per dimension.
    pub resolution: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GridSolveConfig {
    fn default() -> Self {
        Self {
            h: 0.1,
            lipschitz: 1.0,
            gamma: 1.0,
            resolution: 41,
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

impl GridSolveConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::Config("resolution must be at least 2".into()));
        }
        if !(self.h > 0.0 && self.gamma > 0.0 && self.lipschitz > 0.0 && self.tol > 0.0) {
            return Err(Error::Config("h, gamma, lipschitz and tol must be positive".into()));
        }
        if !(1.0 - self.gamma * self.h > 0.0) {
            return Err(Error::Config(format!(
                "h = {} and gamma = {} violate h < 1/gamma: the per-step factor (1 − γh) must be positive",
                self.h, self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TabularRun {
    pub q: GridQ<f64>,
    pub rows: Vec<ResidualRow<f64>>,
    /// Fixed point used as the error reference.
    pub reference: GridQ<f64>,
}

impl TabularRun {
    pub fn csv(&self) -> String {
        residual_csv(&self.rows)
    }
}

/// Tolerance of the reference fixed point.
const REFERENCE_TOL: f64 = 1e-13;

fn setup(cfg: &GridSolveConfig) -> Result<(GridQ<f64>, BellmanOperator<f64>, GridQ<f64>)> {
    cfg.validate()?;
    let bench = Lq1d {
        gamma: cfg.gamma,
        ..Lq1d::default()
    };
    let grid = bench.grid(cfg.resolution);
    let op = BellmanOperator::new(&grid, &bench.system(), cfg.gamma, cfg.h, cfg.lipschitz, DEFAULT_BALL_DIRECTIONS)?;
    let reference = value_iterate(&grid, &op, REFERENCE_TOL.min(cfg.tol), cfg.max_iter)?.q;
    Ok((grid, op, reference))
}

/// Value iteration from zero until the sup-norm step drops below `tol`,
/// with errors tracked against a tighter fixed point.
pub fn grid_solve(cfg: &GridSolveConfig) -> Result<TabularRun> {
    let (grid, op, reference) = setup(cfg)?;
    let iters = value_iterate(&grid, &op, cfg.tol, cfg.max_iter)?.iterations;
    let (q, rows) = run_q_learning(&grid, &op, &QSyncSchedule::Constant(1.0), iters, &reference)?;
    Ok(TabularRun { q, rows, reference })
}

/// `iters` synchronous HJ Q-learning updates from zero under `schedule`.
pub fn qlearn_tabular(cfg: &GridSolveConfig, schedule: &QSyncSchedule<f64>, iters: usize) -> Result<TabularRun> {
    schedule.validate().map_err(|e| Error::Config(e.to_string()))?;
    let (grid, op, reference) = setup(cfg)?;
    let (q, rows) = run_q_learning(&grid, &op, schedule, iters, &reference)?;
    Ok(TabularRun { q, rows, reference })
}
