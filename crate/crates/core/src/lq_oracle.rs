//! Ground truth for discounted linear-quadratic problems.
//!
//! The discounted problem `min ∫ e^{-γt}(xᵀQx + aᵀRa) dt` is equivalent to the
//! undiscounted one on `A_γ = A - (γ/2)I`; its value is `x₀ᵀPx₀` where `P` is
//! the stabilizing solution of the algebraic Riccati equation on `A_γ`.

use crate::dynamics::LinearQuadratic;
use crate::error::{Error, Result};
use crate::numerics::{rk4_step, Matrix};
use crate::scalar::Real;

const CARE_STEP: f64 = 0.01;
const CARE_TOL: f64 = 1e-10;
const CARE_MAX_STEPS: usize = 1_000_000;
/// Rollouts whose state norm exceeds this are reported as infinite cost.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<S> {
    /// Value matrix: optimal discounted cost from `x` is `xᵀPx`.
    pub p: Matrix<S>,
    /// Optimal feedback `a = -K x` with `K = R⁻¹BᵀP`.
    pub gain: Matrix<S>,
    /// Max-abs CARE residual at `p`.
    pub residual: S,
    /// RK4 steps taken to reach stationarity.
    pub steps: usize,
}

struct CareTerms<S> {
    a_shift: Matrix<S>,
    qc: Matrix<S>,
    s: Matrix<S>,
}

impl<S: Real> CareTerms<S> {
    fn new(sys: &LinearQuadratic<S>) -> Result<Self> {
        let n = sys.a.rows();
        let a_shift = &sys.a - &Matrix::identity(n).scale(sys.gamma * S::lit(0.5));
        let rinv_bt = sys.rc.cholesky_solve(&sys.b.transpose())?;
        let mut s = sys.b.matmul(&rinv_bt)?;
        s.symmetrize();
        Ok(Self {
            a_shift,
            qc: sys.qc.clone(),
            s,
        })
    }

    /// `A_γᵀP + PA_γ + Q − PSP`
    fn rhs(&self, p: &Matrix<S>) -> Matrix<S> {
        let pa = p * &self.a_shift;
        let psp = &(p * &self.s) * p;
        let mut out = &(&pa.transpose() + &pa) + &self.qc;
        out = &out - &psp;
        out
    }
}

/// Max-abs residual of the discounted CARE at `p`.
pub fn care_residual<S: Real>(sys: &LinearQuadratic<S>, p: &Matrix<S>) -> Result<S> {
    Ok(CareTerms::new(sys)?.rhs(p).max_abs())
}

/// Integrates the Riccati differential equation from `P(0) = 0` with RK4
/// until it is stationary.
pub fn solve_care<S: Real>(sys: &LinearQuadratic<S>) -> Result<RiccatiSolution<S>> {
    let terms = CareTerms::new(sys)?;
    let n = sys.a.rows();
    let tol = S::lit(CARE_TOL);
    let mut p = Matrix::<S>::zeros(n, n);
    let mut residual = terms.rhs(&p).max_abs();
    let mut steps = 0;
    while residual >= tol {
        if steps >= CARE_MAX_STEPS {
            return Err(Error::NoConvergence {
                iterations: steps,
                residual: residual.as_f64(),
            });
        }
        let next = rk4_step(
            |flat: &[S]| {
                let pm = Matrix::from_vec(n, n, flat.to_vec()).expect("square");
                terms.rhs(&pm).into_vec()
            },
            p.as_slice(),
            S::lit(CARE_STEP),
            1,
        )
        .map_err(|_| Error::NoConvergence {
            iterations: steps,
            residual: f64::INFINITY,
        })?;
        p = Matrix::from_vec(n, n, next)?;
        p.symmetrize();
        residual = terms.rhs(&p).max_abs();
        steps += 1;
    }
    let gain = sys.rc.cholesky_solve(&sys.b.transpose().matmul(&p)?)?;
    Ok(RiccatiSolution {
        p,
        gain,
        residual,
        steps,
    })
}

/// Minimal discounted cost `x₀ᵀ P x₀` (the reward-maximizing Q-value is its negation).
pub fn optimal_cost<S: Real>(sol: &RiccatiSolution<S>, x0: &[S]) -> S {
    sol.p.quad_form(x0)
}

impl<S: Real> RiccatiSolution<S> {
    /// Unconstrained optimal action `-Kx`.
    pub fn feedback(&self, x: &[S]) -> Vec<S> {
        self.gain
            .mat_vec(x)
            .expect("state dimension")
            .into_iter()
            .map(|v| -v)
            .collect()
    }
}

/// Evaluation horizon whose discount tail is `e^{-10}`.
pub fn default_horizon<S: Real>(gamma: S) -> S {
    S::lit(10.0) / gamma
}

/// Discounted cost `Σ_k e^{-γkh}·h·(x_kᵀQx_k + a_kᵀRa_k)` of a zero-order-hold
/// rollout over `horizon` seconds.
///
/// `policy(x_k, a_k)` returns `a_{k+1}`, the action held over the next
/// interval. Rollouts whose state norm exceeds [`DIVERGENCE_NORM`] return
/// `+∞`.
pub fn evaluate_policy_cost<S, P>(
    sys: &LinearQuadratic<S>,
    mut policy: P,
    x0: &[S],
    a0: &[S],
    h: S,
    horizon: S,
) -> Result<S>
where
    S: Real,
    P: FnMut(&[S], &[S]) -> Vec<S>,
{
    let zoh = sys.zero_order_hold(h)?;
    let steps = (horizon / h).round().to_usize().unwrap_or(0);
    let step_discount = (-sys.gamma * h).exp();
    let mut weight = S::one();
    let mut cost = S::zero();
    let mut x = x0.to_vec();
    let mut a = a0.to_vec();
    let limit = S::lit(DIVERGENCE_NORM);
    for _ in 0..steps {
        cost += weight * h * (sys.qc.quad_form(&x) + sys.rc.quad_form(&a));
        let next = match zoh.apply(&x, &a) {
            Ok(v) => v,
            Err(_) => return Ok(S::infinity()),
        };
        let next_a = policy(&x, &a);
        x = next;
        a = next_a;
        let norm = x.iter().map(|v| *v * *v).sum::<S>().sqrt();
        if !(norm <= limit) || a.iter().any(|v| !v.is_finite()) {
            return Ok(S::infinity());
        }
        weight *= step_discount;
    }
    Ok(cost)
}
