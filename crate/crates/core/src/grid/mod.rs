//! Semi-discrete HJB machinery on a rectangular state-action grid.
//!
//! The grid always works with the *clipped* flow `clip(ξ(x, a; h))`, and
//! candidate actions `a + h b` are saturated into the action box, so the
//! discrete operator is an exact monotone `(1 − γh)`-contraction on the
//! stored node values.

mod bellman;
mod table;

pub use bellman::{
    bellman_apply, residual_csv, run_q_learning, sup_over_ball, value_iterate, BallCandidates,
    BellmanOperator, QSyncSchedule, ResidualRow, ValueIteration, BALL_DIRECTION_SEED, BALL_RADII,
    DEFAULT_BALL_DIRECTIONS,
};
pub use table::{GridQ, Stencil};

use crate::dynamics::{BoxSet, Clipped, ControlSystem, LinearQuadratic};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Real;

/// Parameters of the one-dimensional clipped LQ benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lq1d<S> {
    pub a: S,
    pub b: S,
    pub q: S,
    pub r: S,
    pub gamma: S,
    pub half_width: S,
}

impl<S: Real> Default for Lq1d<S> {
    fn default() -> Self {
        Self {
            a: S::lit(0.5),
            b: S::one(),
            q: S::one(),
            r: S::one(),
            gamma: S::one(),
            half_width: S::one(),
        }
    }
}

impl<S: Real> Lq1d<S> {
    /// `ẋ = a x + b u` on `[-w, w]²`, sampled with saturation into the box.
    pub fn system(&self) -> Clipped<LinearQuadratic<S>> {
        let sys = LinearQuadratic::new(
            Matrix::from_diag(&[self.a]),
            Matrix::from_diag(&[self.b]),
            Matrix::from_diag(&[self.q]),
            Matrix::from_diag(&[self.r]),
            self.gamma,
        )
        .expect("scalar LQ parameters")
        .with_boxes(BoxSet::symmetric(1, self.half_width), BoxSet::symmetric(1, self.half_width))
        .expect("scalar boxes");
        Clipped(sys)
    }

    /// Zero-filled `res × res` grid over the benchmark boxes.
    pub fn grid(&self, res: usize) -> GridQ<S> {
        GridQ::new(
            BoxSet::symmetric(1, self.half_width),
            BoxSet::symmetric(1, self.half_width),
            vec![res, res],
            S::zero(),
        )
        .expect("valid benchmark grid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow<S> {
    pub h: S,
    /// `sup_probes |Q^{h,⋆} − Q^{h_min,⋆}|`
    pub sup_diff: S,
    pub iterations: usize,
}

/// Solves the semi-discrete equation for every `h` on one common grid and
/// compares each solution with the finest one at the probe points.
#[allow(clippy::too_many_arguments)]
pub fn consistency_sweep<S: Real, C: ControlSystem<S> + ?Sized>(
    sys: &C,
    gamma: S,
    lipschitz: S,
    h_list: &[S],
    template: &GridQ<S>,
    probe_points: &[(Vec<S>, Vec<S>)],
    tol: S,
    max_iter: usize,
) -> Result<Vec<ConsistencyRow<S>>> {
    if h_list.is_empty() {
        return Err(Error::InvalidArgument("empty h list".into()));
    }
    if h_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("h list must be strictly decreasing".into()));
    }
    let mut solutions = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let op = BellmanOperator::new(template, sys, gamma, h, lipschitz, DEFAULT_BALL_DIRECTIONS)?;
        solutions.push(value_iterate(template, &op, tol, max_iter)?);
    }
    let reference = &solutions.last().expect("non-empty").q;
    h_list
        .iter()
        .zip(&solutions)
        .map(|(&h, sol)| {
            let mut worst = S::zero();
            for (x, a) in probe_points {
                let d = (sol.q.interp(x, a)? - reference.interp(x, a)?).abs();
                worst = worst.max(d);
            }
            Ok(ConsistencyRow {
                h,
                sup_diff: worst,
                iterations: sol.iterations,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnSystem;
    use crate::numerics::Rng;

    fn const_reward_system(c: f64) -> FnSystem<f64> {
        FnSystem::new(
            BoxSet::symmetric(1, 1.0),
            BoxSet::symmetric(1, 1.0),
            |x: &[f64], a: &[f64]| vec![0.3 * x[0] + a[0]],
            move |_: &[f64], _: &[f64]| c,
        )
    }

    fn random_grid(template: &GridQ<f64>, rng: &mut Rng) -> GridQ<f64> {
        template.from_fn(|_, _| rng.uniform(-2.0, 2.0))
    }

    #[test]
    fn constant_reward_from_zero() {
        let sys = const_reward_system(3.0);
        let g = Lq1d::<f64>::default().grid(9);
        let out = bellman_apply(&g, &sys, 1.0, 0.1, 1.0, 16).unwrap();
        assert!(out.values().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn zero_reward_scales_constant() {
        let sys = const_reward_system(0.0);
        let g = Lq1d::<f64>::default().grid(9).from_fn(|_, _| 5.0);
        let out = bellman_apply(&g, &sys, 1.0, 0.1, 1.0, 16).unwrap();
        assert!(out.values().iter().all(|&v| (v - 4.5).abs() < 1e-14));
    }

    #[test]
    fn interval_precondition() {
        let sys = const_reward_system(0.0);
        let g = Lq1d::<f64>::default().grid(5);
        let err = bellman_apply(&g, &sys, 10.0, 0.2, 1.0, 16).unwrap_err();
        assert!(err.to_string().contains("(1 − γh)"));
    }

    #[test]
    fn contraction_and_monotonicity_on_random_pairs() {
        let bench = Lq1d::<f64>::default();
        let sys = bench.system();
        let g = bench.grid(21);
        let op = BellmanOperator::new(&g, &sys, 1.0, 0.1, 1.0, 16).unwrap();
        let mut rng = Rng::new(99);
        for _ in 0..20 {
            let q1 = random_grid(&g, &mut rng);
            let q2 = random_grid(&g, &mut rng);
            let lhs = op.apply(&q1).unwrap().sup_distance(&op.apply(&q2).unwrap());
            assert!(lhs <= 0.9 * q1.sup_distance(&q2));

            let bumped = q1.from_fn(|_, _| 0.0);
            let upper = q1.with_values(q1.values().iter().zip(bumped.values()).map(|(v, _)| v + rng.uniform(0.0, 1.0)).collect()).unwrap();
            let (t_lo, t_hi) = (op.apply(&q1).unwrap(), op.apply(&upper).unwrap());
            assert!(t_lo.values().iter().zip(t_hi.values()).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn value_iteration_geometric_series() {
        let sys = const_reward_system(2.0);
        let g = Lq1d::<f64>::default().grid(7);
        let op = BellmanOperator::new(&g, &sys, 1.0, 0.1, 1.0, 16).unwrap();
        let vi = value_iterate(&g, &op, 1e-12, 10_000).unwrap();
        assert!(vi.q.values().iter().all(|&v| (v - 2.0).abs() < 1e-10));

        let zero = const_reward_system(0.0);
        let op0 = BellmanOperator::new(&g, &zero, 1.0, 0.1, 1.0, 16).unwrap();
        let mut rng = Rng::new(1);
        let vi0 = value_iterate(&random_grid(&g, &mut rng), &op0, 1e-12, 10_000).unwrap();
        assert!(vi0.q.values().iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn value_iteration_residuals_follow_banach_rate() {
        let bench = Lq1d::<f64>::default();
        let g = bench.grid(21);
        let op = BellmanOperator::new(&g, &bench.system(), 1.0, 0.1, 1.0, 16).unwrap();
        let vi = value_iterate(&g, &op, 1e-10, 10_000).unwrap();
        let r0 = vi.residuals[0];
        for (k, r) in vi.residuals.iter().enumerate() {
            assert!(*r <= 0.9f64.powi(k as i32) * r0 * (1.0 + 1e-12));
        }
        let fixed = op.apply(&vi.q).unwrap();
        assert!(fixed.sup_distance(&vi.q) <= 1e-10);
        assert!(vi.error_bound <= 1e-10 * 9.0);
    }

    #[test]
    fn max_iter_is_reported() {
        let bench = Lq1d::<f64>::default();
        let g = bench.grid(5);
        let op = BellmanOperator::new(&g, &bench.system(), 1.0, 0.1, 1.0, 16).unwrap();
        assert!(matches!(value_iterate(&g, &op, 1e-14, 3), Err(Error::NoConvergence { iterations: 3, .. })));
    }

    #[test]
    fn sync_update_blends() {
        let bench = Lq1d::<f64>::default();
        let g = bench.grid(11);
        let op = BellmanOperator::new(&g, &bench.system(), 1.0, 0.1, 1.0, 16).unwrap();
        let mut rng = Rng::new(5);
        let q = random_grid(&g, &mut rng);
        assert_eq!(op.q_sync_update(&q, 0.0).unwrap(), q);
        assert_eq!(op.q_sync_update(&q, 1.0).unwrap(), op.apply(&q).unwrap());
        assert!(op.q_sync_update(&q, 1.5).is_err());
        assert!(op.q_sync_update(&q, -0.1).is_err());
    }

    #[test]
    fn sync_errors_respect_product_bound() {
        let bench = Lq1d::<f64>::default();
        let g = bench.grid(15);
        let op = BellmanOperator::new(&g, &bench.system(), 1.0, 0.1, 1.0, 16).unwrap();
        let star = value_iterate(&g, &op, 1e-13, 100_000).unwrap().q;
        for schedule in [QSyncSchedule::Constant(0.5), QSyncSchedule::Harmonic, QSyncSchedule::List(vec![1.0, 0.2, 0.7])] {
            let (_, rows) = run_q_learning(&g, &op, &schedule, 60, &star).unwrap();
            for r in rows {
                assert!(r.sup_error_to_fixed_point <= r.bound + 1e-12, "{schedule:?} {r:?}");
            }
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(QSyncSchedule::<f64>::Harmonic.rate(3), 0.25);
        assert_eq!(QSyncSchedule::List(vec![0.5, 0.1]).rate(7), 0.1);
        assert_eq!(QSyncSchedule::Constant(0.0f64).diverges(), Some(false));
        assert_eq!(QSyncSchedule::<f64>::Harmonic.diverges(), Some(true));
        assert!(QSyncSchedule::List(vec![0.5, 1.2]).validate().is_err());
    }

    #[test]
    fn ball_sup_on_constant_and_linear() {
        let g = GridQ::new(BoxSet::symmetric(1, 1.0), BoxSet::symmetric(1, 2.0), vec![5, 9], 0.0).unwrap();
        let c = g.from_fn(|_, _| 1.25);
        let (v, _) = sup_over_ball(&c, &[0.1], &[0.0], 0.1, 1.0, 16).unwrap();
        assert_eq!(v, 1.25);

        for slope in [0.8, -1.7] {
            let lin = g.from_fn(|x, a| x[0] + slope * a[0]);
            let (v, b) = sup_over_ball(&lin, &[0.3], &[0.4], 0.1, 2.0, 16).unwrap();
            let base = lin.interp(&[0.3], &[0.4]).unwrap();
            assert!((v - (base + 0.1 * 2.0 * f64::abs(slope))).abs() < 1e-12);
            assert_eq!(b, vec![2.0 * slope.signum()]);
        }
    }

    #[test]
    fn ball_sup_matches_brute_force_in_one_dimension() {
        // Queries at action nodes with hL below the action spacing: the
        // interpolant is linear on each side of the centre.
        let g = GridQ::new(BoxSet::symmetric(1, 1.0), BoxSet::symmetric(1, 1.0), vec![11, 11], 0.0).unwrap();
        let q = g.from_fn(|x, a| (2.0f64 * x[0] + 1.0).sin() * (3.0f64 * a[0]).cos() + 0.5 * a[0] * a[0]);
        let mut rng = Rng::new(12);
        for _ in 0..30 {
            let x = [rng.uniform(-1.0, 1.0)];
            let a = [g.coordinate(1, 1 + rng.index(9))];
            let (h, l) = (0.05, 1.5);
            let (v, _) = sup_over_ball(&q, &x, &a, h, l, 16).unwrap();
            let brute = (0..=10_000)
                .map(|i| {
                    let t = -1.0 + 2.0 * i as f64 / 10_000.0;
                    q.interp(&x, &[a[0] + h * l * t]).unwrap()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((v - brute).abs() < 1e-6, "{v} vs {brute}");
        }
    }

    #[test]
    fn consistency_single_h_is_zero() {
        let bench = Lq1d::<f64>::default();
        let g = bench.grid(11);
        let rows = consistency_sweep(&bench.system(), 1.0, 1.0, &[0.1], &g, &[(vec![0.0], vec![0.0])], 1e-10, 10_000).unwrap();
        assert_eq!(rows[0].sup_diff, 0.0);
        assert!(consistency_sweep(&bench.system(), 1.0, 1.0, &[0.1, 0.2], &g, &[], 1e-10, 10).is_err());
    }

    #[test]
    fn grid_adapter_gradient_drives_rollouts() {
        use crate::critic::ActionValue;
        let g = Lq1d::<f64>::default().grid(5).from_fn(|x, a| x[0] - 2.0 * a[0]);
        let grad = g.action_gradient(&[0.2], &[3.0]);
        assert!((grad[0] + 2.0).abs() < 1e-12);
        assert!((g.value(&[0.2], &[3.0]) - (0.2 - 2.0)).abs() < 1e-12);
    }
}
