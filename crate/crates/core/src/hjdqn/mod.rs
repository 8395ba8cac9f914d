//! HJ DQN: off-policy learning of a critic whose greedy policy moves the
//! action along `∇ₐQ` at rate `L`, so no actor network is needed.

mod buffer;
mod config;

pub use buffer::{ReplayBuffer, Transition};
pub use config::{gamma_for_step_discount, Smoothing, TrainConfig, LQ_STEP_DISCOUNT};

use crate::critic::{ActionValue, BatchTape, MlpCritic, PolyakPair};
use crate::dynamics::{step_sde, BoxSet, ControlSystem};
use crate::error::{Error, Result};
use crate::lq_oracle::DIVERGENCE_NORM;
use crate::numerics::{adam_update, AdamConfig, AdamState, Rng};
use crate::scalar::Real;

/// Gradients shorter than this use the fallback direction `e₁`.
pub const ZERO_GRADIENT: f64 = 1e-12;

/// `hL·φ(|g|)·g/|g|`, with `g/|g|` replaced by `e₁` when `|g|` vanishes.
pub fn increment_from_gradient<S: Real>(g: &[S], cfg: &TrainConfig<S>) -> Vec<S> {
    let rho = g.iter().map(|v| *v * *v).sum::<S>().sqrt();
    let scale = cfg.max_increment() * cfg.smoothing.factor(rho, cfg.lipschitz);
    if rho < S::lit(ZERO_GRADIENT) || !rho.is_finite() {
        let mut e = vec![S::zero(); g.len()];
        if let Some(first) = e.first_mut() {
            *first = scale;
        }
        return e;
    }
    g.iter().map(|&v| scale * v / rho).collect()
}

/// Greedy action increment computed from `critic`'s action gradient.
pub fn greedy_increment<S: Real, Q: ActionValue<S> + ?Sized>(critic: &Q, x: &[S], a: &[S], cfg: &TrainConfig<S>) -> Vec<S> {
    increment_from_gradient(&critic.action_gradient(x, a), cfg)
}

/// Critic that supplies the increment direction: online under double-Q,
/// otherwise the target.
pub fn direction_critic<'a, S, Q>(online: &'a Q, target: &'a Q, cfg: &TrainConfig<S>) -> &'a Q {
    if cfg.double_q {
        online
    } else {
        target
    }
}

/// Regression target `h·r + (1 − γh)·Q⁻(x', clip(a + Δa))`.
pub fn target_value<S: Real, Q: ActionValue<S>>(
    online: &Q,
    target: &Q,
    t: &Transition<S>,
    cfg: &TrainConfig<S>,
    action_box: &BoxSet<S>,
) -> S {
    let inc = greedy_increment(direction_critic(online, target, cfg), &t.x, &t.a, cfg);
    let next_a: Vec<S> = t.a.iter().zip(&inc).map(|(&a, &d)| a + d).collect();
    let next_a = action_box.clip(&next_a);
    cfg.h * t.r + cfg.step_factor() * target.value(&t.x_next, &next_a)
}

/// `a_prev + Δa + σε`, clipped to the action box.
pub fn act<S: Real, Q: ActionValue<S> + ?Sized>(
    critic: &Q,
    x: &[S],
    a_prev: &[S],
    cfg: &TrainConfig<S>,
    action_box: &BoxSet<S>,
    rng: &mut Rng,
) -> Vec<S> {
    let inc = greedy_increment(critic, x, a_prev, cfg);
    let mut next: Vec<S> = a_prev.iter().zip(&inc).map(|(&a, &d)| a + d).collect();
    if cfg.noise_std > S::zero() {
        for v in &mut next {
            *v += cfg.noise_std * S::lit(rng.standard_normal());
        }
    }
    action_box.clip_in_place(&mut next);
    next
}

/// Online/target critics together with the optimizer state and reusable
/// batch buffers.
#[derive(Debug, Clone)]
pub struct Learner<S> {
    pub pair: PolyakPair<S>,
    pub adam: AdamState<S>,
    adam_cfg: AdamConfig<S>,
    online_tape: BatchTape<S>,
    target_tape: BatchTape<S>,
    inputs: Vec<S>,
    grads: Vec<S>,
    scales: Vec<S>,
    increments: Vec<S>,
}

impl<S: Real> Learner<S> {
    pub fn new(state_dim: usize, action_dim: usize, cfg: &TrainConfig<S>, rng: &mut Rng) -> Self {
        Self::from_critic(MlpCritic::new(state_dim, action_dim, &cfg.hidden, rng), cfg)
    }

    pub fn from_critic(critic: MlpCritic<S>, cfg: &TrainConfig<S>) -> Self {
        let n = critic.num_params();
        Self {
            pair: PolyakPair::new(critic),
            adam: AdamState::new(n),
            adam_cfg: AdamConfig::with_lr(cfg.lr),
            online_tape: BatchTape::new(),
            target_tape: BatchTape::new(),
            inputs: Vec::new(),
            grads: vec![S::zero(); n],
            scales: Vec::new(),
            increments: Vec::new(),
        }
    }

    pub fn online(&self) -> &MlpCritic<S> {
        &self.pair.online
    }

    /// One minibatch regression step on the online critic followed by a
    /// Polyak update of the target; returns the batch mean-squared loss.
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer<S>,
        cfg: &TrainConfig<S>,
        action_box: &BoxSet<S>,
        rng: &mut Rng,
    ) -> Result<S> {
        let idx = buffer.sample_indices(cfg.batch_size, rng)?;
        let batch = idx.len();
        let online = &self.pair.online;
        let target = &self.pair.target;
        let n = online.sizes()[0] - action_box.dim();
        let m = action_box.dim();
        let width = n + m;

        self.inputs.clear();
        for &i in &idx {
            let t = buffer.get(i).expect("sampled index");
            self.inputs.extend_from_slice(&t.x);
            self.inputs.extend_from_slice(&t.a);
        }
        online.forward_batch(&self.inputs, batch, &mut self.online_tape)?;
        online.backward_batch(&mut self.online_tape);
        let grad_source = if cfg.double_q {
            &self.online_tape
        } else {
            target.forward_batch(&self.inputs, batch, &mut self.target_tape)?;
            target.backward_batch(&mut self.target_tape);
            &self.target_tape
        };

        self.increments.clear();
        for (j, &i) in idx.iter().enumerate() {
            let t = buffer.get(i).expect("sampled index");
            let g = &grad_source.input_grads()[j * width + n..(j + 1) * width];
            let inc = increment_from_gradient(g, cfg);
            let mut next: Vec<S> = t.a.iter().zip(&inc).map(|(&a, &d)| a + d).collect();
            action_box.clip_in_place(&mut next);
            self.increments.extend_from_slice(&t.x_next);
            self.increments.extend_from_slice(&next);
        }
        target.forward_batch(&self.increments, batch, &mut self.target_tape)?;

        let nb = S::from_usize(batch).unwrap();
        let two = S::lit(2.0);
        let gamma_factor = cfg.step_factor();
        let mut loss = S::zero();
        self.scales.clear();
        for (j, &i) in idx.iter().enumerate() {
            let r = buffer.get(i).expect("sampled index").r;
            let y = cfg.h * r + gamma_factor * self.target_tape.outputs()[j];
            let resid = self.online_tape.outputs()[j] - y;
            loss += resid * resid;
            self.scales.push(two * resid / nb);
        }
        loss /= nb;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("training loss {loss}")));
        }

        self.grads.iter_mut().for_each(|g| *g = S::zero());
        online.accumulate_param_grads(&mut self.online_tape, &self.scales, &mut self.grads);
        adam_update(self.pair.online.params_mut(), &self.grads, &mut self.adam, &self.adam_cfg)?;
        self.pair.polyak_update(cfg.polyak)?;
        Ok(loss)
    }
}

/// How the environment advances during data collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepMode {
    #[default]
    Exact,
    /// Euler-Maruyama with the system's diffusion.
    Stochastic,
}

fn state_norm<S: Real>(x: &[S]) -> S {
    x.iter().map(|v| *v * *v).sum::<S>().sqrt()
}

/// In-progress episode of data collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<S> {
    pub x: Vec<S>,
    pub a: Vec<S>,
    /// Steps taken so far.
    pub step: usize,
    /// `Σ (1−γh)^k·h·r_k` over the steps taken.
    pub discounted_return: S,
    weight: S,
}

impl<S: Real> Episode<S> {
    /// Draws `(x₀, a₀)` uniformly from the system's boxes.
    pub fn begin<C: ControlSystem<S> + ?Sized>(sys: &C, rng: &mut Rng) -> Self {
        let x = sys.state_box().sample(rng);
        let a = sys.action_box().sample(rng);
        Self {
            x,
            a,
            step: 0,
            discounted_return: S::zero(),
            weight: S::one(),
        }
    }

    /// Executes the held action for `h`, stores the transition, trains once
    /// if the buffer holds a full batch and picks the next action.
    pub fn advance<C: ControlSystem<S> + ?Sized>(
        &mut self,
        sys: &C,
        learner: &mut Learner<S>,
        buffer: &mut ReplayBuffer<S>,
        cfg: &TrainConfig<S>,
        mode: StepMode,
        rng: &mut Rng,
    ) -> Result<()> {
        let r = sys.reward(&self.x, &self.a);
        let x_next = match mode {
            StepMode::Exact => sys.step_exact(&self.x, &self.a, cfg.h)?,
            StepMode::Stochastic => step_sde(sys, &self.x, &self.a, cfg.h, rng)?,
        };
        if !(state_norm(&x_next) <= S::lit(DIVERGENCE_NORM)) || !r.is_finite() {
            return Err(Error::Diverged(format!(
                "state left the divergence bound at episode step {}",
                self.step
            )));
        }
        self.discounted_return += self.weight * cfg.h * r;
        self.weight *= cfg.step_factor();
        buffer.push(Transition {
            x: self.x.clone(),
            a: self.a.clone(),
            r,
            x_next: x_next.clone(),
        })?;
        if buffer.len() >= cfg.batch_size {
            learner.train_step(buffer, cfg, sys.action_box(), rng)?;
        }
        self.a = act(learner.online(), &self.x, &self.a, cfg, sys.action_box(), rng);
        self.x = x_next;
        self.step += 1;
        Ok(())
    }
}

/// Collects `K` transitions from a uniformly drawn `(x₀, a₀)`, training once
/// per step when the buffer holds a full batch. Returns `Σ (1−γh)^k·h·r_k`.
pub fn run_episode<S: Real, C: ControlSystem<S> + ?Sized>(
    sys: &C,
    learner: &mut Learner<S>,
    buffer: &mut ReplayBuffer<S>,
    cfg: &TrainConfig<S>,
    mode: StepMode,
    rng: &mut Rng,
) -> Result<S> {
    let mut ep = Episode::begin(sys, rng);
    while ep.step < cfg.episode_len {
        ep.advance(sys, learner, buffer, cfg, mode, rng)?;
    }
    Ok(ep.discounted_return)
}

/// Noise-free greedy trajectory; entry `k` of each vector belongs to time `k·h`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<S> {
    pub times: Vec<S>,
    pub states: Vec<Vec<S>>,
    pub actions: Vec<Vec<S>>,
    pub rewards: Vec<S>,
    /// `Σ (1−γh)^k·h·(−r_k)`; `+∞` once the state norm exceeds the divergence bound.
    pub discounted_cost: S,
    pub diverged: bool,
}

/// Follows `a_{k+1} = clip(a_k + Δa(x_k, a_k))` for `round(horizon/h)` steps.
pub fn rollout_greedy<S: Real, C: ControlSystem<S> + ?Sized, Q: ActionValue<S> + ?Sized>(
    sys: &C,
    critic: &Q,
    x0: &[S],
    a0: &[S],
    cfg: &TrainConfig<S>,
    horizon: S,
) -> Result<Rollout<S>> {
    let steps = (horizon / cfg.h).round().to_usize().unwrap_or(0);
    let mut out = Rollout {
        times: Vec::with_capacity(steps),
        states: Vec::with_capacity(steps),
        actions: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        discounted_cost: S::zero(),
        diverged: false,
    };
    let mut x = x0.to_vec();
    let mut a = sys.action_box().clip(a0);
    let mut weight = S::one();
    for k in 0..steps {
        let r = sys.reward(&x, &a);
        out.times.push(S::from_usize(k).unwrap() * cfg.h);
        out.states.push(x.clone());
        out.actions.push(a.clone());
        out.rewards.push(r);
        out.discounted_cost -= weight * cfg.h * r;
        weight *= cfg.step_factor();
        let next = sys.step_exact(&x, &a, cfg.h);
        match next {
            Ok(v) if state_norm(&v) <= S::lit(DIVERGENCE_NORM) => x = v,
            _ => {
                out.diverged = true;
                out.discounted_cost = S::infinity();
                break;
            }
        }
        let inc = greedy_increment(critic, &out.states[k], &a, cfg);
        for (ai, d) in a.iter_mut().zip(inc) {
            *ai += d;
        }
        sys.action_box().clip_in_place(&mut a);
    }
    Ok(out)
}

/// Log-log slope of `|max_{|a'−a|≤hL} Q(x', a') − Q(x', a + Δa)|` against `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGap {
    pub h: Vec<f64>,
    pub gap: Vec<f64>,
    /// `None` when every gap is below `1e-12` (nothing to fit).
    pub slope: Option<f64>,
}

/// Radii and angles of the brute-force ball lattice; 5 × 2000 = 10⁴ points
/// for two-dimensional actions.
const GAP_RADII: usize = 5;
const GAP_POINTS: usize = 10_000;

fn ball_points(m: usize, radius: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    match m {
        1 => (0..GAP_POINTS)
            .map(|i| vec![radius * (2.0 * i as f64 / (GAP_POINTS - 1) as f64 - 1.0)])
            .collect(),
        2 => {
            let angles = GAP_POINTS / GAP_RADII;
            let mut pts = Vec::with_capacity(GAP_POINTS);
            for ri in 1..=GAP_RADII {
                let r = radius * ri as f64 / GAP_RADII as f64;
                for k in 0..angles {
                    let th = std::f64::consts::TAU * k as f64 / angles as f64;
                    pts.push(vec![r * th.cos(), r * th.sin()]);
                }
            }
            pts
        }
        _ => (0..GAP_POINTS)
            .map(|_| {
                let dir: Vec<f64> = rng.unit_vector(m);
                let r = radius * rng.uniform(0.0, 1.0).powf(1.0 / m as f64);
                dir.into_iter().map(|v| v * r).collect()
            })
            .collect(),
    }
}

/// For each `h`, compares the maximum of `Q(x', ·)` over a 10⁴-point lattice
/// of the ball around `a` (plus the greedy point itself) with the value at the
/// greedy increment `a + hL∇ₐQ(x,a)/|∇ₐQ(x,a)|`.
pub fn target_gap_slope<Q: ActionValue<f64> + ?Sized>(
    critic: &Q,
    x: &[f64],
    x_next: &[f64],
    a: &[f64],
    lipschitz: f64,
    h_list: &[f64],
) -> Result<TargetGap> {
    let g = critic.action_gradient(x, a);
    if g.iter().map(|v| v * v).sum::<f64>().sqrt() < ZERO_GRADIENT {
        return Err(Error::InvalidArgument("action gradient vanishes at the probe point".into()));
    }
    let mut rng = Rng::new(0x6a9);
    let mut gaps = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let cfg = TrainConfig {
            h,
            lipschitz,
            gamma: 0.0,
            ..TrainConfig::default()
        };
        let inc = increment_from_gradient(&g, &cfg);
        let greedy_a: Vec<f64> = a.iter().zip(&inc).map(|(p, d)| p + d).collect();
        let greedy = critic.value(x_next, &greedy_a);
        let mut best = greedy.max(critic.value(x_next, a));
        for p in ball_points(a.len(), h * lipschitz, &mut rng) {
            let cand: Vec<f64> = a.iter().zip(&p).map(|(u, v)| u + v).collect();
            best = best.max(critic.value(x_next, &cand));
        }
        gaps.push((best - greedy).abs());
    }
    let slope = if gaps.iter().all(|&g| g < 1e-12) {
        None
    } else {
        Some(log_log_slope(h_list, &gaps))
    };
    Ok(TargetGap {
        h: h_list.to_vec(),
        gap: gaps,
        slope,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
