//! Continuous-time Q-learning built on Hamilton-Jacobi-Bellman equations for
//! Q-functions under Lipschitz-rate-constrained controls.
//!
//! * [`grid`] solves the semi-discrete HJB equation on a state-action grid
//!   (Bellman operator, value iteration, synchronous HJ Q-learning).
//! * [`critic`] and [`hjdqn`] implement the actor-free deep variant, where the
//!   greedy action follows `ȧ = L ∇ₐQ/|∇ₐQ|` instead of an actor network.
//! * [`lq_oracle`] provides Riccati ground truth for linear-quadratic problems.
//! * [`expcli`] drives seeded experiments and writes learning curves.
//!
//! All numerical code is generic over [`Real`]; the aliases below fix the
//! double-precision instantiation used by the experiment driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critic;
pub mod dynamics;
pub mod error;
pub mod expcli;
pub mod grid;
pub mod hjdqn;
pub mod lq_oracle;
pub mod numerics;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = numerics::Matrix<f64>;
pub type LinearQuadratic = dynamics::LinearQuadratic<f64>;
pub type BoxSet = dynamics::BoxSet<f64>;
pub type RiccatiSolution = lq_oracle::RiccatiSolution<f64>;
pub type GridQ = grid::GridQ<f64>;
pub type MlpCritic = critic::MlpCritic<f64>;
pub type PolyakPair = critic::PolyakPair<f64>;
pub type TrainConfig = hjdqn::TrainConfig<f64>;
pub type ReplayBuffer = hjdqn::ReplayBuffer<f64>;
pub type Transition = hjdqn::Transition<f64>;

pub type MatrixF32 = numerics::Matrix<f32>;
pub type MlpCriticF32 = critic::MlpCritic<f32>;
