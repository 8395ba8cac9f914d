//! Experiment orchestration: configuration files, seeded multi-run training
//! with periodic evaluation, learning-curve output, ablations and the
//! tabular and Riccati drivers behind the command-line tool.

mod config;
mod run;
mod tabular;

pub use config::{Benchmark, ExperimentConfig};
pub use run::{
    curve_csv, git_describe, median, run_curves, run_experiment, run_seed, summarize, write_csv, write_meta,
    CurvePoint, Evaluator, ExperimentResult, SeedCurve, Summary, CSV_HEADER, DISCOUNT_NOTE,
};
pub use tabular::{grid_solve, qlearn_tabular, riccati_report, GridSolveConfig, RiccatiReport, TabularRun};

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hjdqn::Smoothing;

/// Single field varied by an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    DoubleQ,
    /// Sampling interval; the learning rate scales with `h` and the
    /// continuous discount rate is held fixed.
    SamplingInterval,
    Lipschitz,
    Smoothing,
}

impl FromStr for AblationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double-q" => Ok(Self::DoubleQ),
            "h" => Ok(Self::SamplingInterval),
            "lipschitz" => Ok(Self::Lipschitz),
            "smoothing" => Ok(Self::Smoothing),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected double-q, h, lipschitz or smoothing)"
            ))),
        }
    }
}

/// One configuration of an ablation, written to `base.output/<name>`.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationVariant {
    pub name: String,
    pub config: ExperimentConfig,
}

/// Variants differing from `base` in the ablated field only. `values`
/// overrides the default sweep for the numeric kinds.
pub fn ablation_variants(base: &ExperimentConfig, kind: AblationKind, values: &[f64]) -> Result<Vec<AblationVariant>> {
    let variant = |name: String, config: ExperimentConfig| AblationVariant {
        config: ExperimentConfig {
            output: base.output.join(&name),
            ..config
        },
        name,
    };
    let pick = |default: &[f64]| if values.is_empty() { default.to_vec() } else { values.to_vec() };
    let out: Vec<AblationVariant> = match kind {
        AblationKind::DoubleQ => [true, false]
            .into_iter()
            .map(|d| {
                variant(
                    format!("double_q={d}"),
                    ExperimentConfig {
                        double_q: d,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        AblationKind::Smoothing => [Smoothing::None, Smoothing::Tanh]
            .into_iter()
            .map(|s| {
                variant(
                    format!("smoothing={}", s.name()),
                    ExperimentConfig {
                        smoothing: s,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        AblationKind::Lipschitz => pick(&[1.0, 10.0])
            .into_iter()
            .map(|l| {
                variant(
                    format!("lipschitz={l}"),
                    ExperimentConfig {
                        lipschitz: l,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        AblationKind::SamplingInterval => {
            let gamma = base.effective_gamma();
            pick(&[2.0 * base.h, base.h, 0.5 * base.h])
                .into_iter()
                .map(|h| {
                    variant(
                        format!("h={h}"),
                        ExperimentConfig {
                            h,
                            gamma: Some(gamma),
                            lr: base.lr * h / base.h,
                            ..base.clone()
                        },
                    )
                })
                .collect()
        }
    };
    for v in &out {
        v.config.validate()?;
    }
    Ok(out)
}

/// Runs every variant with [`run_experiment`].
pub fn run_ablation(
    base: &ExperimentConfig,
    kind: AblationKind,
    values: &[f64],
) -> Result<Vec<(AblationVariant, ExperimentResult)>> {
    ablation_variants(base, kind, values)?
        .into_iter()
        .map(|v| {
            let res = run_experiment(&v.config)?;
            Ok((v, res))
        })
        .collect()
}
