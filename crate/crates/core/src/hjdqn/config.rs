use serde::{Deserialize, Serialize};

use crate::critic::DEFAULT_HIDDEN;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Multiplier `φ(|∇ₐQ|)` on the unit-direction action increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    /// `φ ≡ 1`: every increment has magnitude exactly `hL`.
    #[default]
    None,
    /// `φ(ρ) = tanh(ρ/L)`
    Tanh,
    /// `φ(ρ) = ρ/(L + ρ)`
    Rational,
}

impl Smoothing {
    pub fn factor<S: Real>(self, rho: S, lipschitz: S) -> S {
        match self {
            Smoothing::None => S::one(),
            Smoothing::Tanh => (rho / lipschitz).tanh(),
            Smoothing::Rational => rho / (lipschitz + rho),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Smoothing::None => "none",
            Smoothing::Tanh => "tanh",
            Smoothing::Rational => "rational",
        }
    }
}

impl std::str::FromStr for Smoothing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Smoothing::None),
            "tanh" => Ok(Smoothing::Tanh),
            "rational" => Ok(Smoothing::Rational),
            other => Err(Error::InvalidArgument(format!(
                "unknown smoothing `{other}` (expected none, tanh or rational)"
            ))),
        }
    }
}

/// Per-step discount `e^{-γh}` of the linear-quadratic benchmarks.
pub const LQ_STEP_DISCOUNT: f64 = 0.99999;

/// Continuous discount rate whose per-step factor `e^{-γh}` equals `factor`.
pub fn gamma_for_step_discount<S: Real>(factor: S, h: S) -> S {
    -factor.ln() / h
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<S> {
    /// Sampling interval (s).
    pub h: S,
    /// Bound `L` on `|ȧ|`.
    pub lipschitz: S,
    /// Discount rate (1/s).
    pub gamma: S,
    pub lr: S,
    /// Target-network blend coefficient.
    pub polyak: S,
    /// Exploration noise standard deviation per action coordinate.
    pub noise_std: S,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Steps per episode `K`.
    pub episode_len: usize,
    /// Number of episodes `M`.
    pub episodes: usize,
    pub smoothing: Smoothing,
    /// Take the increment direction from the online critic.
    pub double_q: bool,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl<S: Real> Default for TrainConfig<S> {
    /// Settings of the linear-quadratic experiments.
    fn default() -> Self {
        let h = S::lit(0.05);
        Self {
            h,
            lipschitz: S::lit(10.0),
            gamma: gamma_for_step_discount(S::lit(LQ_STEP_DISCOUNT), h),
            lr: S::lit(1e-3),
            polyak: S::lit(1e-3),
            noise_std: S::lit(0.1),
            buffer_capacity: 20_000,
            batch_size: 512,
            episode_len: 200,
            episodes: 250,
            smoothing: Smoothing::None,
            double_q: true,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl<S: Real> TrainConfig<S> {
    /// Per-step factor `1 − γh` used in targets and returns.
    pub fn step_factor(&self) -> S {
        S::one() - self.gamma * self.h
    }

    /// Largest action change per step, `hL`.
    pub fn max_increment(&self) -> S {
        self.h * self.lipschitz
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let finite = [self.h, self.lipschitz, self.gamma, self.lr, self.polyak, self.noise_std];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite training constant".into());
        }
        if !(self.h > S::zero()) {
            return bad(format!("h = {} must be positive", self.h));
        }
        if self.gamma < S::zero() {
            return bad(format!("gamma = {} must be non-negative", self.gamma));
        }
        if !(self.step_factor() > S::zero()) {
            return bad(format!(
                "h = {} and gamma = {} violate h < 1/gamma: the per-step factor (1 − γh) = {} must be positive",
                self.h,
                self.gamma,
                self.step_factor()
            ));
        }
        if !(self.lipschitz > S::zero()) {
            return bad(format!("lipschitz = {} must be positive", self.lipschitz));
        }
        if !(self.polyak > S::zero() && self.polyak < S::one()) {
            return bad(format!("polyak = {} must lie in (0, 1)", self.polyak));
        }
        if self.noise_std < S::zero() {
            return bad(format!("noise_std = {} must be non-negative", self.noise_std));
        }
        if !(self.lr > S::zero()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return bad(format!(
                "buffer_capacity = {} is smaller than batch_size = {}",
                self.buffer_capacity, self.batch_size
            ));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}
