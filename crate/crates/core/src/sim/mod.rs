//! Fixed-step simulation of a serial chain under the hierarchical controller.
//!
//! Every control step builds the instantaneous velocity-level hierarchy from
//! the task list, solves it with the active search under the metric `M`,
//! builds the momentum transformation and applies the compliant torque law.
//! The torque is held constant over the integration step.

mod log;
mod metrics;
mod run;
mod scenario;

use nalgebra::DMatrix;
use serde::Deserialize;
use thiserror::Error;

use crate::controller::ControllerError;
use crate::robot::{RobotError, RobotState, SerialChain, TaskSpec};
use crate::scalar::Scalar;
use crate::whqp::WhqpError;

pub use log::{read_log, write_log, LogRecord, LogTable, TrajectoryLog};
pub use metrics::{run_metrics, MetricWindows, RunMetrics};
pub use run::{integrate, run, step, ControlStep, HierarchicalController};
pub use scenario::{
    alignment_scenario, load_scenario, orientation_profile, read_scenario_file,
    spiral_box_scenario, AlignmentParams, BoxParams, Gains, OrientationParams, ScenarioFile,
    ScenarioKind, SpiralParams, BUNDLED_CHAIN,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("joint speed exceeded {guard} at t = {t}")]
    IntegrationDiverged { t: f64, guard: f64 },
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Whqp(#[from] WhqpError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Weight of the tracking rows against the regulation rows on the
/// track/regulate level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightCase {
    /// `W = diag(E, 1e-6 E)`.
    Track,
    /// `W = diag(1e-6 E, E)`.
    Regulate,
    /// `W = E`.
    Equal,
}

impl WeightCase {
    pub const ALL: [WeightCase; 3] = [WeightCase::Track, WeightCase::Regulate, WeightCase::Equal];

    /// Diagonal of the 6×6 weight.
    pub fn weight<T: Scalar>(self) -> DMatrix<T> {
        let small = T::lit(1e-6);
        let (track, regulate) = match self {
            WeightCase::Track => (T::one(), small),
            WeightCase::Regulate => (small, T::one()),
            WeightCase::Equal => (T::one(), T::one()),
        };
        DMatrix::from_fn(6, 6, |i, j| match (i == j, i < 3) {
            (true, true) => track,
            (true, false) => regulate,
            _ => T::zero(),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightCase::Track => "track",
            WeightCase::Regulate => "regulate",
            WeightCase::Equal => "equal",
        }
    }
}

impl std::str::FromStr for WeightCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "track" => Ok(WeightCase::Track),
            "regulate" => Ok(WeightCase::Regulate),
            "equal" => Ok(WeightCase::Equal),
            other => Err(format!(
                "unknown weight case '{other}' (track, regulate or equal)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    SemiImplicitEuler,
    Rk4,
}

/// Everything a run needs. Tasks sharing a priority are stacked into one level.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T: Scalar> {
    pub name: String,
    pub chain: SerialChain<T>,
    pub initial: RobotState<T>,
    pub tasks: Vec<TaskSpec<T>>,
    /// Damping source `D̄` of each task, shaped like its gain.
    pub damping: Vec<DMatrix<T>>,
    pub dt: T,
    pub duration: T,
    pub integrator: Integrator,
    pub rank_tol: T,
    /// Largest joint speed norm tolerated before the run is declared diverged.
    pub velocity_guard: T,
}

impl<T: Scalar> Scenario<T> {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        self.chain.validate()?;
        let n = self.chain.dof();
        if self.initial.q.len() != n || self.initial.dq.len() != n {
            return bad(format!("initial state must have {n} entries"));
        }
        if !(self.dt > T::zero()) || !(self.duration >= self.dt) {
            return bad("need dt > 0 and duration ≥ dt".into());
        }
        if self.tasks.is_empty() {
            return bad("no tasks".into());
        }
        if self.damping.len() != self.tasks.len() {
            return bad("one damping matrix per task is required".into());
        }
        for (task, d) in self.tasks.iter().zip(&self.damping) {
            task.validate(n)?;
            if d.shape() != task.gain.shape() || d.clone().cholesky().is_none() {
                return bad(format!(
                    "{}: damping must be SPD and shaped like the gain",
                    task.kind.label()
                ));
            }
        }
        Ok(())
    }

    /// Number of integration steps (and log records).
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round().to_f64() as usize
    }

    /// Distinct priorities in increasing order; one hierarchy level each.
    pub fn priorities(&self) -> Vec<usize> {
        let mut p: Vec<usize> = self.tasks.iter().map(|t| t.priority).collect();
        p.sort_unstable();
        p.dedup();
        p
    }
}
