//! Continuous-control-set nonlinear model predictive control for reluctance
//! synchronous machines (RSM).
//!
//! The crate is organised bottom-up:
//!
//! * [`flux_model`]: grey-box flux-linkage maps, their Jacobians, inversion
//!   and least-squares identification from gridded flux data.
//! * [`machine`]: machine equations, reference-frame transforms and the
//!   averaged two-level inverter.
//! * [`integrator`]: Gauss-Legendre (implicit midpoint) collocation of the
//!   flux DAE with first-order sensitivities.
//! * [`mtpa`]: maximum-torque-per-Ampere references and the voltage-limited
//!   speed bound.
//! * [`qp_solver`]: dense dual active-set QP solver.
//! * [`nmpc`]: the tracking OCP and its real-time iteration.
//! * [`estimator`]: disturbance-augmented extended Kalman filter.
//! * [`baseline_pi`]: gain-scheduled PI current controller.
//! * [`sim`]: closed-loop simulator, config format, logs and metrics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline_pi;
pub mod error;
pub mod estimator;
pub mod flux_model;
pub mod integrator;
pub mod machine;
pub mod mtpa;
pub mod nmpc;
pub mod qp_solver;
pub mod sim;

pub use error::{Error, Result};

/// Two-dimensional column vector (dq or αβ quantities).
pub type Vec2 = nalgebra::Vector2<f64>;
/// 2×2 matrix.
pub type Mat2 = nalgebra::Matrix2<f64>;
