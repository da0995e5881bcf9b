//! Reactive model predictive contouring control (RMPCC) for serial manipulators.
//!
//! The crate is organised bottom-up:
//!
//! - [`liegroup`]: SO(3) exponential/logarithm, skew operators and the inverse right Jacobian.
//! - [`pathspline`]: s-parameterised position/orientation reference built from via-points.
//! - [`kinematics`]: serial-chain forward kinematics, geometric Jacobian and manipulability.
//! - [`distancefield`]: capsule self/environment distances and an MLP distance backend.
//! - [`barriers`]: relaxed logarithmic barrier and control-barrier constraint rows.
//! - [`qp`]: dense dual active-set QP solver used by the SQP loop.
//! - [`ocp`]: the receding-horizon contouring problem, its linearisation and the SQP driver,
//!   plus the time-indexed tracking baseline.
//! - [`sim`]: closed-loop kinematic simulation, scenarios, traces and metrics.
//! - [`gradcheck`]: finite-difference audit of every analytic derivative.

pub mod barriers;
pub mod distancefield;
mod error;
pub mod gradcheck;
pub mod kinematics;
pub mod liegroup;
pub mod ocp;
pub mod pathspline;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
