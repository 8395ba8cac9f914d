use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
}

impl<S: Real> AdamConfig<S> {
    pub fn with_lr(lr: S) -> Self {
        Self {
            lr,
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
        }
    }
}

/// First/second moment estimates and the number of completed updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub step: u64,
}

impl<S: Real> AdamState<S> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step; increments `state.step` first, so the
/// first call uses step count 1.
pub fn adam_update<S: Real>(
    params: &mut [S],
    grads: &[S],
    state: &mut AdamState<S>,
    cfg: &AdamConfig<S>,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let one = S::one();
    let c1 = one - cfg.beta1.powi(t);
    let c2 = one - cfg.beta2.powi(t);
    let step_size = cfg.lr / c1;
    let c2_sqrt = c2.sqrt();
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (one - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (one - cfg.beta2) * g * g;
        // lr·m̂/(√v̂ + ε) with m̂ = m/c1, v̂ = v/c2
        *p -= step_size * *m / (v.sqrt() / c2_sqrt + cfg.eps);
    }
    Ok(())
}
