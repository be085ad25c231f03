//! Serial-chain rigid-body model and the task families used by the controller.

mod chain;
mod dynamics;
mod file;
mod tasks;

use thiserror::Error;

pub use chain::{rpy_rotation, ChainKinematics, Joint, JointType, Link, RobotState, SerialChain};
pub use dynamics::christoffel_coriolis;
pub use file::parse_chain;
pub use tasks::{
    jacobian_dot, orientation_error, orientation_error_rate, task_kinematics, OrientationProfile,
    Spiral, TaskKind, TaskKinematics, TaskSpec,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobotError {
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("chain file: {0}")]
    Parse(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("inertia matrix is not positive definite")]
    SingularInertia,
}
