//! Continuous-time control systems and the zero-order-hold sampler that
//! turns them into transitions without discretizing the dynamics.

use crate::error::{Error, Result};
use crate::numerics::{expm, rk4_step, Matrix, Rng};
use crate::scalar::Real;

/// Longest integrator substep for systems without a closed-form flow.
pub const MAX_SUBSTEP: f64 = 0.01;

/// Number of equal substeps of length at most [`MAX_SUBSTEP`] covering `h`.
pub fn substeps_for<S: Real>(h: S) -> usize {
    let n = (h.as_f64() / MAX_SUBSTEP - 1e-9).ceil();
    n.max(1.0) as usize
}

/// Axis-aligned box of closed intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
}

impl<S: Real> BoxSet<S> {
    pub fn new(lo: Vec<S>, hi: Vec<S>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Shape("box bounds of different lengths".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidArgument("box needs finite lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    /// `[-half_width, half_width]^dim`.
    pub fn symmetric(dim: usize, half_width: S) -> Self {
        Self {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[S]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    /// Per-coordinate saturation into the box.
    pub fn clip(&self, x: &[S]) -> Vec<S> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect()
    }

    pub fn clip_in_place(&self, x: &mut [S]) {
        for (v, (&l, &h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.max(l).min(h);
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<S> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| rng.uniform_real(l, h))
            .collect()
    }

    pub fn widths(&self) -> Vec<S> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| h - l).collect()
    }
}

/// A continuous-time system `ẋ = f(x, a)` with running reward `r(x, a)`.
pub trait ControlSystem<S: Real>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn drift(&self, x: &[S], a: &[S]) -> Vec<S>;
    /// Reward rate (per second).
    fn reward(&self, x: &[S], a: &[S]) -> S;
    /// Diffusion coefficient `σ(x, a)` (`n × k`) of the stochastic variant.
    fn diffusion(&self, _x: &[S], _a: &[S]) -> Option<Matrix<S>> {
        None
    }
    fn state_box(&self) -> &BoxSet<S>;
    fn action_box(&self) -> &BoxSet<S>;

    /// State after holding `a` constant for `h` seconds from `x`.
    ///
    /// The default integrates the drift with RK4 using substeps of at most
    /// [`MAX_SUBSTEP`] seconds.
    fn step_exact(&self, x: &[S], a: &[S], h: S) -> Result<Vec<S>> {
        check_step_input(x, a, h)?;
        let next = rk4_step(|s: &[S]| self.drift(s, a), x, h, substeps_for(h))
            .map_err(|_| Error::Diverged("non-finite state while integrating".into()))?;
        Ok(next)
    }
}

fn check_step_input<S: Real>(x: &[S], a: &[S], h: S) -> Result<()> {
    if !(h > S::zero()) {
        return Err(Error::InvalidArgument(format!("sampling interval {h} must be positive")));
    }
    if x.iter().chain(a).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state or action".into()));
    }
    Ok(())
}

impl<S: Real, T: ControlSystem<S> + ?Sized> ControlSystem<S> for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn drift(&self, x: &[S], a: &[S]) -> Vec<S> {
        (**self).drift(x, a)
    }
    fn reward(&self, x: &[S], a: &[S]) -> S {
        (**self).reward(x, a)
    }
    fn diffusion(&self, x: &[S], a: &[S]) -> Option<Matrix<S>> {
        (**self).diffusion(x, a)
    }
    fn state_box(&self) -> &BoxSet<S> {
        (**self).state_box()
    }
    fn action_box(&self) -> &BoxSet<S> {
        (**self).action_box()
    }
    fn step_exact(&self, x: &[S], a: &[S], h: S) -> Result<Vec<S>> {
        (**self).step_exact(x, a, h)
    }
}

/// Euler-Maruyama over `[0, h]` with the action held constant.
pub fn step_sde<S: Real, C: ControlSystem<S> + ?Sized>(
    sys: &C,
    x: &[S],
    a: &[S],
    h: S,
    rng: &mut Rng,
) -> Result<Vec<S>> {
    check_step_input(x, a, h)?;
    if sys.diffusion(x, a).is_none() {
        return Err(Error::InvalidArgument("step_sde on a system without diffusion".into()));
    }
    let n = substeps_for(h);
    let dt = h / S::from_usize(n).unwrap();
    let sqrt_dt = dt.sqrt();
    let mut state = x.to_vec();
    for _ in 0..n {
        let f = sys.drift(&state, a);
        let sigma = sys
            .diffusion(&state, a)
            .ok_or_else(|| Error::InvalidArgument("diffusion vanished along the path".into()))?;
        let noise: Vec<S> = (0..sigma.cols())
            .map(|_| S::lit(rng.standard_normal()))
            .collect();
        let kick = sigma.mat_vec(&noise)?;
        for i in 0..state.len() {
            state[i] += f[i] * dt + kick[i] * sqrt_dt;
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite state in SDE step".into()));
        }
    }
    Ok(state)
}

/// Per-coordinate saturation into the system's state box.
pub fn clip_to_box<S: Real, C: ControlSystem<S> + ?Sized>(sys: &C, x: &[S]) -> Vec<S> {
    sys.state_box().clip(x)
}

/// `ẋ = Ax + Ba`, reward `-(xᵀQx + aᵀRa)`, optional constant additive noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQuadratic<S> {
    pub a: Matrix<S>,
    pub b: Matrix<S>,
    pub qc: Matrix<S>,
    pub rc: Matrix<S>,
    /// Continuous discount rate (1/s).
    pub gamma: S,
    pub state_box: BoxSet<S>,
    pub action_box: BoxSet<S>,
    pub noise: Option<Matrix<S>>,
}

/// Precomputed zero-order-hold maps: `x' = Φ x + Γ a` for a fixed `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroOrderHold<S> {
    pub h: S,
    pub phi: Matrix<S>,
    pub gamma_b: Matrix<S>,
}

impl<S: Real> ZeroOrderHold<S> {
    pub fn apply(&self, x: &[S], a: &[S]) -> Result<Vec<S>> {
        let mut out = self.phi.mat_vec(x)?;
        for (o, v) in out.iter_mut().zip(self.gamma_b.mat_vec(a)?) {
            *o += v;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite LQ state".into()));
        }
        Ok(out)
    }
}

impl<S: Real> LinearQuadratic<S> {
    pub fn new(
        a: Matrix<S>,
        b: Matrix<S>,
        qc: Matrix<S>,
        rc: Matrix<S>,
        gamma: S,
    ) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || b.rows() != n {
            return Err(Error::Shape("A must be n×n and B n×m".into()));
        }
        let m = b.cols();
        if qc.rows() != n || qc.cols() != n || rc.rows() != m || rc.cols() != m {
            return Err(Error::Shape("Qc must be n×n and Rc m×m".into()));
        }
        let sym_tol = S::lit(1e-12);
        if (&qc - &qc.transpose()).max_abs() > sym_tol * (S::one() + qc.max_abs()) {
            return Err(Error::InvalidArgument("Qc is not symmetric".into()));
        }
        if (&rc - &rc.transpose()).max_abs() > sym_tol * (S::one() + rc.max_abs()) {
            return Err(Error::InvalidArgument("Rc is not symmetric".into()));
        }
        // PSD up to a 1e-12 eigenvalue slack
        let shifted = &qc + &Matrix::identity(n).scale(S::lit(1e-12) + S::epsilon() * qc.max_abs());
        shifted
            .cholesky()
            .map_err(|_| Error::InvalidArgument("Qc is not positive semidefinite".into()))?;
        rc.cholesky()
            .map_err(|_| Error::InvalidArgument("Rc is not positive definite".into()))?;
        if !(gamma >= S::zero()) {
            return Err(Error::InvalidArgument("discount rate must be non-negative".into()));
        }
        Ok(Self {
            a,
            b,
            qc,
            rc,
            gamma,
            state_box: BoxSet::symmetric(n, S::one()),
            action_box: BoxSet::symmetric(m, S::lit(10.0)),
            noise: None,
        })
    }

    pub fn with_boxes(mut self, state_box: BoxSet<S>, action_box: BoxSet<S>) -> Result<Self> {
        if state_box.dim() != self.a.rows() || action_box.dim() != self.b.cols() {
            return Err(Error::Shape("box dimensions".into()));
        }
        self.state_box = state_box;
        self.action_box = action_box;
        Ok(self)
    }

    /// Additive diffusion `σ` (`n × k`) for the stochastic variant.
    pub fn with_noise(mut self, sigma: Matrix<S>) -> Result<Self> {
        if sigma.rows() != self.a.rows() {
            return Err(Error::Shape("diffusion must have n rows".into()));
        }
        self.noise = Some(sigma);
        Ok(self)
    }

    /// `Φ = e^{Ah}` and `Γ(h)B` from the exponential of `[[A, I], [0, 0]]·h`.
    pub fn zero_order_hold(&self, h: S) -> Result<ZeroOrderHold<S>> {
        let n = self.a.rows();
        let mut aug = Matrix::zeros(2 * n, 2 * n);
        aug.set_block(0, 0, &self.a);
        aug.set_block(0, n, &Matrix::identity(n));
        let e = expm(&aug, h)?;
        let phi = e.block(0, 0, n, n);
        let gamma = e.block(0, n, n, n);
        Ok(ZeroOrderHold {
            h,
            phi,
            gamma_b: gamma.matmul(&self.b)?,
        })
    }
}

impl<S: Real> ControlSystem<S> for LinearQuadratic<S> {
    fn state_dim(&self) -> usize {
        self.a.rows()
    }

    fn action_dim(&self) -> usize {
        self.b.cols()
    }

    fn drift(&self, x: &[S], a: &[S]) -> Vec<S> {
        let mut dx = self.a.mat_vec(x).expect("state dimension");
        for (d, v) in dx.iter_mut().zip(self.b.mat_vec(a).expect("action dimension")) {
            *d += v;
        }
        dx
    }

    fn reward(&self, x: &[S], a: &[S]) -> S {
        -(self.qc.quad_form(x) + self.rc.quad_form(a))
    }

    fn diffusion(&self, _x: &[S], _a: &[S]) -> Option<Matrix<S>> {
        self.noise.clone()
    }

    fn state_box(&self) -> &BoxSet<S> {
        &self.state_box
    }

    fn action_box(&self) -> &BoxSet<S> {
        &self.action_box
    }

    fn step_exact(&self, x: &[S], a: &[S], h: S) -> Result<Vec<S>> {
        check_step_input(x, a, h)?;
        self.zero_order_hold(h)?.apply(x, a)
    }
}

/// Wrapper whose sampled flow saturates into the state box after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Clipped<C>(pub C);

impl<S: Real, C: ControlSystem<S>> ControlSystem<S> for Clipped<C> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.0.action_dim()
    }
    fn drift(&self, x: &[S], a: &[S]) -> Vec<S> {
        self.0.drift(x, a)
    }
    fn reward(&self, x: &[S], a: &[S]) -> S {
        self.0.reward(x, a)
    }
    fn diffusion(&self, x: &[S], a: &[S]) -> Option<Matrix<S>> {
        self.0.diffusion(x, a)
    }
    fn state_box(&self) -> &BoxSet<S> {
        self.0.state_box()
    }
    fn action_box(&self) -> &BoxSet<S> {
        self.0.action_box()
    }
    fn step_exact(&self, x: &[S], a: &[S], h: S) -> Result<Vec<S>> {
        let next = self.0.step_exact(x, a, h)?;
        Ok(self.0.state_box().clip(&next))
    }
}

type DriftFn<S> = Box<dyn Fn(&[S], &[S]) -> Vec<S> + Send + Sync>;
type RewardFn<S> = Box<dyn Fn(&[S], &[S]) -> S + Send + Sync>;
type DiffusionFn<S> = Box<dyn Fn(&[S], &[S]) -> Matrix<S> + Send + Sync>;

/// System assembled from closures; stepped with RK4.
pub struct FnSystem<S> {
    state_box: BoxSet<S>,
    action_box: BoxSet<S>,
    drift: DriftFn<S>,
    reward: RewardFn<S>,
    diffusion: Option<DiffusionFn<S>>,
}

impl<S: Real> FnSystem<S> {
    pub fn new(
        state_box: BoxSet<S>,
        action_box: BoxSet<S>,
        drift: impl Fn(&[S], &[S]) -> Vec<S> + Send + Sync + 'static,
        reward: impl Fn(&[S], &[S]) -> S + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_box,
            action_box,
            drift: Box::new(drift),
            reward: Box::new(reward),
            diffusion: None,
        }
    }

    pub fn with_diffusion(mut self, sigma: impl Fn(&[S], &[S]) -> Matrix<S> + Send + Sync + 'static) -> Self {
        self.diffusion = Some(Box::new(sigma));
        self
    }
}

impl<S: Real> ControlSystem<S> for FnSystem<S> {
    fn state_dim(&self) -> usize {
        self.state_box.dim()
    }
    fn action_dim(&self) -> usize {
        self.action_box.dim()
    }
    fn drift(&self, x: &[S], a: &[S]) -> Vec<S> {
        (self.drift)(x, a)
    }
    fn reward(&self, x: &[S], a: &[S]) -> S {
        (self.reward)(x, a)
    }
    fn diffusion(&self, x: &[S], a: &[S]) -> Option<Matrix<S>> {
        self.diffusion.as_ref().map(|d| d(x, a))
    }
    fn state_box(&self) -> &BoxSet<S> {
        &self.state_box
    }
    fn action_box(&self) -> &BoxSet<S> {
        &self.action_box
    }
}

const GROWTH_HORIZON: f64 = 50.0;
const GROWTH_FACTOR: f64 = 10.0;
const GROWTH_PROBES: usize = 20;
const MAX_RESAMPLES: usize = 1000;

/// Whether `A` amplifies some of 20 random unit vectors by more than 10x
/// over 50 seconds.
pub fn grows<S: Real>(a: &Matrix<S>, rng: &mut Rng) -> Result<bool> {
    let flow = expm(a, S::lit(GROWTH_HORIZON))?;
    for _ in 0..GROWTH_PROBES {
        let v: Vec<S> = rng.unit_vector(a.rows());
        let y = flow.mat_vec(&v)?;
        let norm = y.iter().map(|c| *c * *c).sum::<S>().sqrt();
        if norm.as_f64() > GROWTH_FACTOR {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Random unstable `d`-dimensional LQ problem: `A ~ U[-0.1, 0.1]`,
/// `B ~ U[-0.5, 0.5]`, `Qc = Rc = I`.
pub fn make_random_lq<S: Real>(d: usize, gamma: S, rng: &mut Rng) -> Result<LinearQuadratic<S>> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    for _ in 0..MAX_RESAMPLES {
        let a = Matrix::random_uniform(d, d, S::lit(-0.1), S::lit(0.1), rng);
        let b = Matrix::random_uniform(d, d, S::lit(-0.5), S::lit(0.5), rng);
        if grows(&a, rng)? {
            return LinearQuadratic::new(a, b, Matrix::identity(d), Matrix::identity(d), gamma);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_RESAMPLES,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_lq(a: f64, b: f64) -> LinearQuadratic<f64> {
        LinearQuadratic::new(
            Matrix::from_diag(&[a]),
            Matrix::from_diag(&[b]),
            Matrix::identity(1),
            Matrix::identity(1),
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn integrator_flow_is_hold_times_b() {
        let sys = LinearQuadratic::new(
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            Matrix::identity(2),
            Matrix::identity(2),
            1.0,
        )
        .unwrap();
        let y = sys.step_exact(&[1.0, 2.0], &[0.5, 0.0], 0.1).unwrap();
        assert!((y[0] - 1.05f64).abs() < 1e-14 && (y[1] - 2.0f64).abs() < 1e-14);
    }

    #[test]
    fn scalar_free_growth() {
        let y = scalar_lq(1.0, 0.0).step_exact(&[1.0], &[3.0], 0.2).unwrap();
        assert!((y[0] - 0.2f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn exact_step_matches_fine_rk4() {
        let mut rng = Rng::new(9);
        let a = Matrix::random_uniform(3, 3, -1.0, 1.0, &mut rng);
        let b = Matrix::random_uniform(3, 2, -1.0, 1.0, &mut rng);
        let sys = LinearQuadratic::new(a, b, Matrix::identity(3), Matrix::identity(2), 0.5).unwrap();
        let x = [0.3, -0.7, 1.1];
        let u = [0.4, -0.2];
        let exact = sys.step_exact(&x, &u, 0.3).unwrap();
        let fine = rk4_step(|s: &[f64]| sys.drift(s, &u), &x, 0.3, 1000).unwrap();
        for (e, f) in exact.iter().zip(&fine) {
            assert!((e - f).abs() < 1e-8);
        }
    }

    #[test]
    fn sde_without_diffusion_is_rejected() {
        let sys = scalar_lq(0.0, 1.0);
        let mut rng = Rng::new(0);
        assert!(step_sde(&sys, &[0.0], &[0.0], 0.1, &mut rng).is_err());
    }

    #[test]
    fn sde_with_zero_noise_matches_generic_step() {
        let sys = FnSystem::new(
            BoxSet::symmetric(1, 1.0),
            BoxSet::symmetric(1, 1.0),
            |x: &[f64], a: &[f64]| vec![-x[0] + a[0]],
            |x: &[f64], _a: &[f64]| -x[0] * x[0],
        )
        .with_diffusion(|_, _| Matrix::zeros(1, 1));
        let mut rng = Rng::new(1);
        let em = step_sde(&sys, &[1.0], &[0.5], 0.1, &mut rng).unwrap();
        let rk = sys.step_exact(&[1.0], &[0.5], 0.1).unwrap();
        // Euler-Maruyama is first order; ten substeps of 0.01
        assert!((em[0] - rk[0]).abs() < 1e-3);
    }

    #[test]
    fn sde_brownian_variance_equals_h() {
        let sys = FnSystem::new(
            BoxSet::symmetric(2, 1.0),
            BoxSet::symmetric(1, 1.0),
            |_: &[f64], _: &[f64]| vec![0.0, 0.0],
            |_: &[f64], _: &[f64]| 0.0,
        )
        .with_diffusion(|_, _| Matrix::identity(2));
        let mut rng = Rng::new(123);
        let n = 10_000;
        let mut sums = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let y = step_sde(&sys, &[0.0, 0.0], &[0.0], 0.1, &mut rng).unwrap();
            for i in 0..2 {
                sums[i] += y[i];
                sq[i] += y[i] * y[i];
            }
        }
        for i in 0..2 {
            let mean = sums[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert!((var - 0.1).abs() < 0.005, "variance {var}");
        }
    }

    #[test]
    fn sde_is_seed_deterministic() {
        let sys = scalar_lq(0.2, 1.0).with_noise(Matrix::from_diag(&[0.3])).unwrap();
        let run = |seed| {
            let mut rng = Rng::new(seed);
            let mut x = vec![0.5];
            for _ in 0..20 {
                x = step_sde(&sys, &x, &[0.1], 0.05, &mut rng).unwrap();
            }
            x
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn clipping() {
        let b = BoxSet::symmetric(2, 1.0);
        assert_eq!(b.clip(&[0.5, -0.25]), vec![0.5, -0.25]);
        assert_eq!(b.clip(&[5.0, -5.0]), vec![1.0, -1.0]);
        let once = b.clip(&[3.0, 0.1]);
        assert_eq!(b.clip(&once), once);
    }

    #[test]
    fn random_lq_entry_bounds_and_growth() {
        let mut rng = Rng::new(2024);
        for d in 1..4 {
            let sys: LinearQuadratic<f64> = make_random_lq(d, 0.01, &mut rng).unwrap();
            assert!(sys.a.as_slice().iter().all(|v| (-0.1..0.1).contains(v)));
            assert!(sys.b.as_slice().iter().all(|v| (-0.5..0.5).contains(v)));
            if d == 1 {
                assert!(sys.a[(0, 0)] > 0.0);
            }
            let flow = expm(&sys.a, 50.0).unwrap();
            let mut probe = Rng::new(77);
            let best = (0..20)
                .map(|_| {
                    let v: Vec<f64> = probe.unit_vector(d);
                    flow.mat_vec(&v).unwrap().iter().map(|c| c * c).sum::<f64>().sqrt()
                })
                .fold(0.0, f64::max);
            assert!(best > 10.0, "growth {best}");
        }
    }

    #[test]
    fn scalar_growth_test_is_sign_of_a() {
        let mut rng = Rng::new(0);
        assert!(grows(&Matrix::from_diag(&[0.08]), &mut rng).unwrap());
        assert!(!grows(&Matrix::from_diag(&[-0.01]), &mut rng).unwrap());
    }

    #[test]
    fn constructor_validation() {
        let bad_q = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(LinearQuadratic::new(Matrix::zeros(2, 2), Matrix::identity(2), bad_q, Matrix::identity(2), 1.0).is_err());
        let neg_r = Matrix::from_diag(&[-1.0]);
        assert!(LinearQuadratic::new(Matrix::zeros(1, 1), Matrix::identity(1), Matrix::identity(1), neg_r, 1.0).is_err());
    }
}
