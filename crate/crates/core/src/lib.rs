//! Control Lyapunov-barrier function (CLBF) based stochastic model predictive
//! control for input-constrained affine SDE systems, with a wheeled mobile robot
//! navigating among circular obstacles as the worked case.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod clbf;
pub mod clf;
pub mod error;
pub mod mpc;
pub mod regions;
pub mod scenario;
pub mod sde;
pub mod sim;

pub use error::{Error, Result};
