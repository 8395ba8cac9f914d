//! Low-level deterministic kernels: seeded randomness, dense matrices,
//! the matrix exponential, fixed-step Runge-Kutta and the Adam rule.

pub mod adam;
pub mod expm;
pub mod matrix;
pub mod ode;
pub mod rng;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use expm::expm;
pub use matrix::Matrix;
pub use ode::rk4_step;
pub use rng::Rng;
