//! Weighted hierarchical quadratic programming and hierarchical compliance control.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the tolerances are tuned for.

// Negated comparisons are used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod decomp;
pub mod robot;
pub mod scalar;
pub mod sim;
pub mod verify;
pub mod whqp;
pub mod wmpi;

pub use scalar::Scalar;

pub type Hierarchy = whqp::Hierarchy<f64>;
pub type TaskLevel = whqp::TaskLevel<f64>;
pub type ActiveSearchState = whqp::ActiveSearchState<f64>;
pub type SearchOptions = whqp::SearchOptions<f64>;
pub type CompactCod = decomp::CompactCod<f64>;
pub type ProjectedStack = wmpi::ProjectedStack<f64>;
pub type SerialChain = robot::SerialChain<f64>;
pub type RobotState = robot::RobotState<f64>;
pub type TaskSpec = robot::TaskSpec<f64>;
pub type TransformState = controller::TransformState<f64>;
