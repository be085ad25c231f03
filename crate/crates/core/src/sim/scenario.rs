//! Scenario builders and the TOML scenario file.
//!
//! ```toml
//! kind = "spiral-box"        # or "alignment"
//! chain = "panda.toml"       # optional, relative to the scenario file
//! case = "equal"             # track, regulate or equal
//! dt = 0.001
//! duration = 10.0
//! integrator = "rk4"         # or "semi-implicit-euler"
//! q0 = [0.0, -0.785398, 0.0, -2.356194, 0.0, 1.570796, 0.785398]
//!
//! [gains]
//! orientation = 12.0
//! box = 10.0
//! track = 5.0
//! posture = 14.0
//!
//! [box]
//! size = [0.3, 0.3]          # centered on the initial tool position unless `center` is set
//!
//! [spiral]
//! radial_rate = 0.02         # centered on the initial tool position unless `center` is set
//! angular_rate = 1.0
//!
//! [orientation]
//! theta_max = 0.4
//! axis_rate = 0.2
//! angle_rate = 0.5
//! ```
//!
//! Every key is optional; missing keys take the values shown.

use std::path::Path;

use nalgebra::{DVector, Vector3};
use serde::Deserialize;

use super::{Integrator, Scenario, SimError, WeightCase};
use crate::decomp::DEFAULT_RANK_TOL;
use crate::robot::{
    parse_chain, OrientationProfile, RobotState, SerialChain, Spiral, TaskKind, TaskSpec,
};
use crate::scalar::Scalar;

/// The seven-joint arm shipped with the crate.
pub const BUNDLED_CHAIN: &str = include_str!("../../../../data/panda.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Orientation tracking, a position box, spiral tracking against center
    /// regulation, and a joint posture, in that priority order.
    #[default]
    SpiralBox,
    /// A second-level task whose two rows become parallel mid-run.
    Alignment,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gains {
    pub orientation: f64,
    #[serde(rename = "box")]
    pub box_: f64,
    pub track: f64,
    pub posture: f64,
    /// `D̄ = damping_scale · K̄` for every task.
    pub damping_scale: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            orientation: 12.0,
            box_: 10.0,
            track: 5.0,
            posture: 14.0,
            damping_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxParams {
    pub size: [f64; 2],
    pub center: Option<[f64; 2]>,
}

impl Default for BoxParams {
    fn default() -> Self {
        BoxParams {
            size: [0.3, 0.3],
            center: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralParams {
    pub center: Option<[f64; 3]>,
    pub initial_radius: f64,
    pub radial_rate: f64,
    pub angular_rate: f64,
}

impl Default for SpiralParams {
    fn default() -> Self {
        SpiralParams {
            center: None,
            initial_radius: 0.0,
            radial_rate: 0.02,
            angular_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrientationParams {
    pub theta_max: f64,
    pub axis_rate: f64,
    pub angle_rate: f64,
}

impl Default for OrientationParams {
    fn default() -> Self {
        OrientationParams {
            theta_max: 0.4,
            axis_rate: 0.2,
            angle_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentParams {
    /// The second direction turns into the first over `[start, end]`.
    pub start: f64,
    pub end: f64,
    /// Target of the third level relative to the initial tool position.
    pub offset: [f64; 3],
}

impl Default for AlignmentParams {
    fn default() -> Self {
        AlignmentParams {
            start: 1.0,
            end: 2.5,
            offset: [0.0, 0.05, 0.05],
        }
    }
}

/// Contents of a scenario file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub kind: ScenarioKind,
    pub chain: Option<String>,
    pub case: WeightCase,
    pub dt: f64,
    pub duration: f64,
    pub integrator: Integrator,
    pub q0: Vec<f64>,
    pub gains: Gains,
    #[serde(rename = "box")]
    pub box_: BoxParams,
    pub spiral: SpiralParams,
    pub orientation: OrientationParams,
    pub alignment: AlignmentParams,
    pub rank_tol: f64,
    pub velocity_guard: f64,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_4;
        ScenarioFile {
            kind: ScenarioKind::SpiralBox,
            chain: None,
            case: WeightCase::Equal,
            dt: 1e-3,
            duration: 10.0,
            integrator: Integrator::Rk4,
            // Elbow-up posture with the hand pointing down.
            q0: vec![
                0.0,
                -FRAC_PI_4,
                0.0,
                -3.0 * FRAC_PI_4,
                0.0,
                2.0 * FRAC_PI_4,
                FRAC_PI_4,
            ],
            gains: Gains::default(),
            box_: BoxParams::default(),
            spiral: SpiralParams::default(),
            orientation: OrientationParams::default(),
            alignment: AlignmentParams::default(),
            rank_tol: DEFAULT_RANK_TOL,
            velocity_guard: 1e3,
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))
    }

    /// Builds the scenario for `chain`.
    pub fn build<T: Scalar>(&self, chain: SerialChain<T>) -> Result<Scenario<T>, SimError> {
        match self.kind {
            ScenarioKind::SpiralBox => spiral_box_scenario(chain, self),
            ScenarioKind::Alignment => alignment_scenario(chain, self),
        }
    }
}

fn v3<T: Scalar>(v: [f64; 3]) -> Vector3<T> {
    Vector3::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]))
}

fn common<T: Scalar>(
    name: &str,
    chain: SerialChain<T>,
    file: &ScenarioFile,
    tasks: Vec<TaskSpec<T>>,
) -> Result<Scenario<T>, SimError> {
    let q0 = DVector::from_iterator(file.q0.len(), file.q0.iter().map(|&x| T::lit(x)));
    let damping = tasks
        .iter()
        .map(|t| &t.gain * T::lit(file.gains.damping_scale))
        .collect();
    let scenario = Scenario {
        name: name.to_string(),
        chain,
        initial: RobotState::at_rest(q0),
        tasks,
        damping,
        dt: T::lit(file.dt),
        duration: T::lit(file.duration),
        integrator: file.integrator,
        rank_tol: T::lit(file.rank_tol),
        velocity_guard: T::lit(file.velocity_guard),
    };
    scenario.validate()?;
    Ok(scenario)
}

fn initial_pose<T: Scalar>(
    chain: &SerialChain<T>,
    file: &ScenarioFile,
) -> Result<nalgebra::Isometry3<T>, SimError> {
    if file.q0.len() != chain.dof() {
        return Err(SimError::InvalidScenario(format!(
            "q0 has {} entries for {} joints",
            file.q0.len(),
            chain.dof()
        )));
    }
    let q0 = DVector::from_iterator(file.q0.len(), file.q0.iter().map(|&x| T::lit(x)));
    Ok(chain.tool_pose(&q0)?)
}

/// The orientation reference of the spiral-box scenario, anchored at `initial`.
pub fn orientation_profile<T: Scalar>(
    initial: nalgebra::UnitQuaternion<T>,
    params: &OrientationParams,
) -> OrientationProfile<T> {
    OrientationProfile {
        initial,
        theta_max: T::lit(params.theta_max),
        axis_rate: T::lit(params.axis_rate),
        angle_rate: T::lit(params.angle_rate),
    }
}

/// Orientation tracking, position box, track/regulate and posture levels.
pub fn spiral_box_scenario<T: Scalar>(
    chain: SerialChain<T>,
    file: &ScenarioFile,
) -> Result<Scenario<T>, SimError> {
    let n = chain.dof();
    let pose = initial_pose(&chain, file)?;
    let p0 = pose.translation.vector;
    let g = &file.gains;

    let profile = orientation_profile(pose.rotation, &file.orientation);
    let center = file
        .box_
        .center
        .map(|c| [T::lit(c[0]), T::lit(c[1])])
        .unwrap_or([p0.x, p0.y]);
    let half = [
        T::lit(file.box_.size[0] * 0.5),
        T::lit(file.box_.size[1] * 0.5),
    ];
    let spiral = Spiral {
        center: file.spiral.center.map(v3).unwrap_or(p0),
        initial_radius: T::lit(file.spiral.initial_radius),
        radial_rate: T::lit(file.spiral.radial_rate),
        angular_rate: T::lit(file.spiral.angular_rate),
    };
    let mut track = TaskSpec::uniform(
        TaskKind::PositionTrackRegulate { spiral },
        2,
        T::lit(g.track),
        n,
    );
    track.weight = file.case.weight();
    let q0 = DVector::from_iterator(n, file.q0.iter().map(|&x| T::lit(x)));
    let tasks = vec![
        TaskSpec::uniform(
            TaskKind::OrientationTrack { profile },
            0,
            T::lit(g.orientation),
            n,
        ),
        TaskSpec::uniform(
            TaskKind::PositionBox {
                lower: [center[0] - half[0], center[1] - half[1]],
                upper: [center[0] + half[0], center[1] + half[1]],
            },
            1,
            T::lit(g.box_),
            n,
        ),
        track,
        TaskSpec::uniform(
            TaskKind::JointPosture { target: q0 },
            3,
            T::lit(g.posture),
            n,
        ),
    ];
    common(
        &format!("spiral-box/{}", file.case.name()),
        chain,
        file,
        tasks,
    )
}

/// Holds the orientation; the second level regulates the tool along `x` and
/// along a direction that turns from `y` into `x`, losing a rank when the two
/// coincide. The third level regulates the tool to an offset target and
/// picks up the released direction. A posture closes the stack.
pub fn alignment_scenario<T: Scalar>(
    chain: SerialChain<T>,
    file: &ScenarioFile,
) -> Result<Scenario<T>, SimError> {
    let n = chain.dof();
    let pose = initial_pose(&chain, file)?;
    let p0 = pose.translation.vector;
    let g = &file.gains;
    let hold = OrientationParams {
        theta_max: 0.0,
        ..OrientationParams::default()
    };
    let still = Spiral {
        center: p0 + v3(file.alignment.offset),
        initial_radius: T::zero(),
        radial_rate: T::zero(),
        angular_rate: T::zero(),
    };
    let q0 = DVector::from_iterator(n, file.q0.iter().map(|&x| T::lit(x)));
    let tasks = vec![
        TaskSpec::uniform(
            TaskKind::OrientationTrack {
                profile: orientation_profile(pose.rotation, &hold),
            },
            0,
            T::lit(g.orientation),
            n,
        ),
        TaskSpec::uniform(
            TaskKind::DirectionalPosition {
                target: p0,
                fixed: Vector3::x(),
                moving: Vector3::y(),
                align_start: T::lit(file.alignment.start),
                align_end: T::lit(file.alignment.end),
            },
            1,
            T::lit(g.box_),
            n,
        ),
        TaskSpec::uniform(
            TaskKind::PositionTrackRegulate { spiral: still },
            2,
            T::lit(g.track),
            n,
        ),
        TaskSpec::uniform(
            TaskKind::JointPosture { target: q0 },
            3,
            T::lit(g.posture),
            n,
        ),
    ];
    common("alignment", chain, file, tasks)
}

/// Reads a scenario file and the chain it names (the bundled arm otherwise),
/// leaving the caller free to adjust the file before building.
pub fn read_scenario_file(path: &Path) -> Result<(ScenarioFile, SerialChain<f64>), SimError> {
    let text = std::fs::read_to_string(path)?;
    let file = ScenarioFile::parse(&text)?;
    let chain_text = match &file.chain {
        Some(rel) => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            std::fs::read_to_string(base.join(rel))?
        }
        None => BUNDLED_CHAIN.to_string(),
    };
    Ok((file, parse_chain(&chain_text)?))
}

pub fn load_scenario(path: &Path) -> Result<(ScenarioFile, Scenario<f64>), SimError> {
    let (file, chain) = read_scenario_file(path)?;
    let scenario = file.build(chain)?;
    Ok((file, scenario))
}
