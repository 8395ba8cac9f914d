use crate::dynamics::ControlSystem;
use crate::error::{Error, Result};
use crate::grid::{GridQ, Stencil};
use crate::numerics::Rng;
use crate::scalar::Real;

/// Fixed sub-seed for the sphere directions of multi-dimensional balls.
pub const BALL_DIRECTION_SEED: u64 = 0x5eed_ba11;
/// Fractions of `L` sampled along every direction: four interior radii and
/// the boundary.
pub const BALL_RADII: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
pub const DEFAULT_BALL_DIRECTIONS: usize = 16;

/// Candidate rate vectors `b` with `|b| ≤ L`, in tie-breaking order:
/// `b = 0` first, then every direction at increasing radius.
#[derive(Debug, Clone, PartialEq)]
pub struct BallCandidates<S> {
    pub rates: Vec<Vec<S>>,
}

impl<S: Real> BallCandidates<S> {
    /// For one action dimension the directions are `+1` and `-1`; otherwise
    /// `n_dirs` unit vectors drawn from a fixed-seed stream.
    pub fn new(action_dim: usize, lipschitz: S, n_dirs: usize) -> Self {
        let directions: Vec<Vec<S>> = if action_dim == 1 {
            vec![vec![S::one()], vec![-S::one()]]
        } else {
            let mut rng = Rng::new(BALL_DIRECTION_SEED);
            (0..n_dirs).map(|_| rng.unit_vector(action_dim)).collect()
        };
        let mut rates = vec![vec![S::zero(); action_dim]];
        for dir in &directions {
            for &r in &BALL_RADII {
                let scale = lipschitz * S::lit(r);
                rates.push(dir.iter().map(|&c| c * scale).collect());
            }
        }
        Self { rates }
    }
}

/// `max_b Q(x_next, clip(a + h b))` over the candidate set, with the first
/// maximal candidate winning ties. Returns the maximum and its `b`.
pub fn sup_over_ball<S: Real>(
    q: &GridQ<S>,
    x_next: &[S],
    a: &[S],
    h: S,
    lipschitz: S,
    n_dirs: usize,
) -> Result<(S, Vec<S>)> {
    let cands = BallCandidates::new(q.action_dim(), lipschitz, n_dirs);
    let x_next = q.state_box().clip(x_next);
    let mut best: Option<(S, usize)> = None;
    for (k, b) in cands.rates.iter().enumerate() {
        let target: Vec<S> = a.iter().zip(b).map(|(&ai, &bi)| ai + h * bi).collect();
        let target = q.action_box().clip(&target);
        let v = q.interp(&x_next, &target)?;
        if best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, k));
        }
    }
    let (v, k) = best.expect("candidate set is never empty");
    Ok((v, cands.rates[k].clone()))
}

/// The semi-discrete Bellman operator
/// `(T Q)(x, a) = h r(x, a) + (1 − γh) max_{|b|≤L} Q(ξ(x, a; h), a + h b)`
/// restricted to the nodes of one grid geometry.
///
/// The successor states and the interpolation stencils of every candidate
/// are fixed by the geometry, so they are computed once at construction and
/// each application is a gather over the previous values (a Jacobi sweep).
#[derive(Debug, Clone)]
pub struct BellmanOperator<S> {
    template: GridQ<S>,
    h: S,
    gamma: S,
    rewards: Vec<S>,
    candidates: usize,
    /// `stencils[node * candidates + c]`
    stencils: Vec<Stencil<S>>,
}

impl<S: Real> BellmanOperator<S> {
    pub fn new<C: ControlSystem<S> + ?Sized>(
        template: &GridQ<S>,
        sys: &C,
        gamma: S,
        h: S,
        lipschitz: S,
        n_dirs: usize,
    ) -> Result<Self> {
        check_interval(gamma, h)?;
        if sys.state_dim() != template.state_dim() || sys.action_dim() != template.action_dim() {
            return Err(Error::Shape("system and grid dimensions differ".into()));
        }
        let cands = BallCandidates::new(template.action_dim(), lipschitz, n_dirs);
        let mut rewards = Vec::with_capacity(template.len());
        let mut stencils = Vec::with_capacity(template.len() * cands.rates.len());
        for i in 0..template.len() {
            let (x, a) = template.node_point(i);
            rewards.push(sys.reward(&x, &a));
            let next = sys.step_exact(&x, &a, h)?;
            let next = template.state_box().clip(&next);
            for b in &cands.rates {
                let target: Vec<S> = a.iter().zip(b).map(|(&ai, &bi)| ai + h * bi).collect();
                let target = template.action_box().clip(&target);
                stencils.push(template.stencil_unchecked(&next, &target));
            }
        }
        Ok(Self {
            template: template.clone(),
            h,
            gamma,
            rewards,
            candidates: cands.rates.len(),
            stencils,
        })
    }

    pub fn h(&self) -> S {
        self.h
    }

    pub fn gamma(&self) -> S {
        self.gamma
    }

    /// Per-step factor `1 − γh`, the contraction modulus.
    pub fn factor(&self) -> S {
        S::one() - self.gamma * self.h
    }

    pub fn template(&self) -> &GridQ<S> {
        &self.template
    }

    fn check_shape(&self, q: &GridQ<S>) -> Result<()> {
        if q.resolution() != self.template.resolution()
            || q.state_box() != self.template.state_box()
            || q.action_box() != self.template.action_box()
        {
            return Err(Error::Shape("grid geometry differs from the operator's".into()));
        }
        Ok(())
    }

    /// Value at one node before blending: `h r + (1 − γh)·max`.
    #[inline]
    fn backup(&self, values: &[S], node: usize) -> S {
        let cands = &self.stencils[node * self.candidates..(node + 1) * self.candidates];
        let mut best = cands[0].eval(values);
        for st in &cands[1..] {
            let v = st.eval(values);
            if v > best {
                best = v;
            }
        }
        self.h * self.rewards[node] + self.factor() * best
    }

    pub fn apply(&self, q: &GridQ<S>) -> Result<GridQ<S>> {
        self.check_shape(q)?;
        let values = q.values();
        let next: Vec<S> = (0..values.len()).map(|i| self.backup(values, i)).collect();
        Ok(GridQ::from_parts(q, next))
    }

    /// Synchronous HJ Q-learning step `Q ← (1 − α)Q + α·T Q`.
    pub fn q_sync_update(&self, q: &GridQ<S>, alpha: S) -> Result<GridQ<S>> {
        if !(S::zero() <= alpha && alpha <= S::one()) {
            return Err(Error::InvalidArgument(format!("learning rate {alpha} outside [0, 1]")));
        }
        self.check_shape(q)?;
        let values = q.values();
        let keep = S::one() - alpha;
        let next: Vec<S> = (0..values.len())
            .map(|i| {
                if alpha == S::zero() {
                    values[i]
                } else if alpha == S::one() {
                    self.backup(values, i)
                } else {
                    keep * values[i] + alpha * self.backup(values, i)
                }
            })
            .collect();
        Ok(GridQ::from_parts(q, next))
    }

    /// Index of the maximizing candidate at every node.
    pub fn greedy_candidates(&self, q: &GridQ<S>) -> Result<Vec<usize>> {
        self.check_shape(q)?;
        let values = q.values();
        Ok((0..values.len())
            .map(|node| {
                let cands = &self.stencils[node * self.candidates..(node + 1) * self.candidates];
                let mut best = (cands[0].eval(values), 0);
                for (k, st) in cands.iter().enumerate().skip(1) {
                    let v = st.eval(values);
                    if v > best.0 {
                        best = (v, k);
                    }
                }
                best.1
            })
            .collect())
    }
}

impl<S: Real> GridQ<S> {
    pub(crate) fn from_parts(geometry: &GridQ<S>, values: Vec<S>) -> GridQ<S> {
        let mut out = geometry.clone();
        out.values_mut().copy_from_slice(&values);
        out
    }
}

fn check_interval<S: Real>(gamma: S, h: S) -> Result<()> {
    if !(h > S::zero()) || !(gamma > S::zero()) {
        return Err(Error::InvalidArgument("need h > 0 and γ > 0".into()));
    }
    if !(gamma * h < S::one()) {
        return Err(Error::InvalidArgument(format!(
            "h = {h} must satisfy h < 1/γ = {} so that the per-step factor (1 − γh) is positive",
            S::one() / gamma
        )));
    }
    Ok(())
}

/// One application of the Bellman operator (builds the operator first).
pub fn bellman_apply<S: Real, C: ControlSystem<S> + ?Sized>(
    q: &GridQ<S>,
    sys: &C,
    gamma: S,
    h: S,
    lipschitz: S,
    n_dirs: usize,
) -> Result<GridQ<S>> {
    BellmanOperator::new(q, sys, gamma, h, lipschitz, n_dirs)?.apply(q)
}

#[derive(Debug, Clone)]
pub struct ValueIteration<S> {
    pub q: GridQ<S>,
    pub iterations: usize,
    /// `‖q_{t+1} − q_t‖∞` per iteration.
    pub residuals: Vec<S>,
    /// A posteriori bound on `‖q − Q^{h,⋆}‖∞`: `residual·(1 − γh)/(γh)`.
    pub error_bound: S,
}

/// Iterates the operator from `q0` until the sup-norm step falls below `tol`.
pub fn value_iterate<S: Real>(
    q0: &GridQ<S>,
    op: &BellmanOperator<S>,
    tol: S,
    max_iter: usize,
) -> Result<ValueIteration<S>> {
    let mut q = q0.clone();
    let mut residuals = Vec::new();
    for it in 1..=max_iter {
        let next = op.apply(&q)?;
        let res = next.sup_distance(&q);
        residuals.push(res);
        q = next;
        if res < tol {
            let gh = op.gamma() * op.h();
            return Ok(ValueIteration {
                q,
                iterations: it,
                residuals,
                error_bound: res * op.factor() / gh,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: residuals.last().map_or(f64::NAN, |r| r.as_f64()),
    })
}

/// Learning-rate sequence for synchronous HJ Q-learning.
#[derive(Debug, Clone, PartialEq)]
pub enum QSyncSchedule<S> {
    Constant(S),
    /// `α_k = 1/(k + 1)`
    Harmonic,
    /// Explicit rates; the last one repeats once the list is exhausted.
    List(Vec<S>),
}

impl<S: Real> QSyncSchedule<S> {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: &S| S::zero() <= *a && *a <= S::one();
        let valid = match self {
            Self::Constant(a) => ok(a),
            Self::Harmonic => true,
            Self::List(v) => !v.is_empty() && v.iter().all(ok),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidArgument("learning rates must lie in [0, 1]".into()))
        }
    }

    pub fn rate(&self, k: usize) -> S {
        match self {
            Self::Constant(a) => *a,
            Self::Harmonic => S::one() / S::from_usize(k + 1).unwrap(),
            Self::List(v) => v[k.min(v.len() - 1)],
        }
    }

    /// Whether `Σ α_k = ∞`; unknown for explicit lists.
    pub fn diverges(&self) -> Option<bool> {
        match self {
            Self::Constant(a) => Some(*a > S::zero()),
            Self::Harmonic => Some(true),
            Self::List(_) => None,
        }
    }
}

/// One row of the per-iteration residual table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRow<S> {
    pub iter: usize,
    /// `‖q_{k+1} − q_k‖∞`
    pub sup_residual: S,
    /// `‖q_{k+1} − Q^{h,⋆}‖∞` against the supplied reference.
    pub sup_error_to_fixed_point: S,
    /// `Π_{τ≤k}(1 − α_τ γh)·‖q_0 − Q^{h,⋆}‖∞`
    pub bound: S,
}

/// Runs `iters` synchronous updates, tracking errors against `reference`.
pub fn run_q_learning<S: Real>(
    q0: &GridQ<S>,
    op: &BellmanOperator<S>,
    schedule: &QSyncSchedule<S>,
    iters: usize,
    reference: &GridQ<S>,
) -> Result<(GridQ<S>, Vec<ResidualRow<S>>)> {
    schedule.validate()?;
    let gh = op.gamma() * op.h();
    let mut bound = q0.sup_distance(reference);
    let mut q = q0.clone();
    let mut rows = Vec::with_capacity(iters);
    for k in 0..iters {
        let alpha = schedule.rate(k);
        let next = op.q_sync_update(&q, alpha)?;
        bound *= S::one() - alpha * gh;
        rows.push(ResidualRow {
            iter: k + 1,
            sup_residual: next.sup_distance(&q),
            sup_error_to_fixed_point: next.sup_distance(reference),
            bound,
        });
        q = next;
    }
    Ok((q, rows))
}

/// CSV with header `iter,sup_residual,sup_error_to_fixed_point,bound`.
pub fn residual_csv<S: Real>(rows: &[ResidualRow<S>]) -> String {
    let mut out = String::from("iter,sup_residual,sup_error_to_fixed_point,bound\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e}\n",
            r.iter,
            r.sup_residual.as_f64(),
            r.sup_error_to_fixed_point.as_f64(),
            r.bound.as_f64()
        ));
    }
    out
}
