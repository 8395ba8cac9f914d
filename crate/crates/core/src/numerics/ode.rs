use crate::error::{Error, Result};
use crate::scalar::Real;

/// Classical fourth-order Runge-Kutta over `[0, h]` with `substeps` equal
/// steps for the autonomous field `f`.
pub fn rk4_step<S, F>(mut f: F, x: &[S], h: S, substeps: usize) -> Result<Vec<S>>
where
    S: Real,
    F: FnMut(&[S]) -> Vec<S>,
{
    if !(h > S::zero()) {
        return Err(Error::InvalidArgument(format!("rk4 step h = {h} must be positive")));
    }
    if substeps == 0 {
        return Err(Error::InvalidArgument("rk4 needs at least one substep".into()));
    }
    let dt = h / S::from_usize(substeps).unwrap();
    let half = dt * S::lit(0.5);
    let sixth = dt / S::lit(6.0);
    let two = S::lit(2.0);
    let mut state = x.to_vec();
    let mut probe = vec![S::zero(); x.len()];
    for _ in 0..substeps {
        let k1 = f(&state);
        for i in 0..state.len() {
            probe[i] = state[i] + half * k1[i];
        }
        let k2 = f(&probe);
        for i in 0..state.len() {
            probe[i] = state[i] + half * k2[i];
        }
        let k3 = f(&probe);
        for i in 0..state.len() {
            probe[i] = state[i] + dt * k3[i];
        }
        let k4 = f(&probe);
        for i in 0..state.len() {
            state[i] += sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rk4 state".into()));
        }
    }
    Ok(state)
}
