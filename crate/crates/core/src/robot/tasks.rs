use nalgebra::{DMatrix, DVector, Quaternion, UnitQuaternion, Vector3};

use super::chain::{RobotState, SerialChain};
use super::RobotError;
use crate::scalar::Scalar;
use crate::whqp::BoundSense;

/// Planar spiral `s(t) = c + (r₀ + ρ t)(cos ωt, sin ωt, 0)` at the height of `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spiral<T: Scalar> {
    pub center: Vector3<T>,
    pub initial_radius: T,
    /// Radial growth (m/s).
    pub radial_rate: T,
    /// Angular rate (rad/s).
    pub angular_rate: T,
}

impl<T: Scalar> Spiral<T> {
    /// Position, velocity and acceleration at time `t`.
    pub fn eval(&self, t: T) -> (Vector3<T>, Vector3<T>, Vector3<T>) {
        let w = self.angular_rate;
        let r = self.initial_radius + self.radial_rate * t;
        let (s, c) = (w * t).sin_cos();
        let radial = Vector3::new(c, s, T::zero());
        let tangent = Vector3::new(-s, c, T::zero());
        let pos = self.center + radial * r;
        let vel = radial * self.radial_rate + tangent * (r * w);
        let two = T::lit(2.0);
        let acc = tangent * (two * self.radial_rate * w) - radial * (r * w * w);
        (pos, vel, acc)
    }
}

/// `R_d(t) = R₀ Rot(a(t), θ(t))` with `a(t) = (cos ω_a t, sin ω_a t, 0)` and
/// `θ(t) = θ_max sin ω_θ t`: a rotation about a slowly turning horizontal axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationProfile<T: Scalar> {
    pub initial: UnitQuaternion<T>,
    pub theta_max: T,
    pub axis_rate: T,
    pub angle_rate: T,
}

impl<T: Scalar> OrientationProfile<T> {
    /// Desired orientation, angular velocity and angular acceleration (world frame).
    pub fn eval(&self, t: T) -> (UnitQuaternion<T>, Vector3<T>, Vector3<T>) {
        let (sa, ca) = (self.axis_rate * t).sin_cos();
        let a = Vector3::new(ca, sa, T::zero());
        let da = Vector3::new(-sa, ca, T::zero()) * self.axis_rate;
        let dda = -a * (self.axis_rate * self.axis_rate);
        let (st, ct) = (self.angle_rate * t).sin_cos();
        let theta = self.theta_max * st;
        let dtheta = self.theta_max * self.angle_rate * ct;
        let ddtheta = -self.theta_max * self.angle_rate * self.angle_rate * st;

        let rel = UnitQuaternion::from_scaled_axis(a * theta);
        // Spatial angular velocity of exp(θ[a]×) for a unit axis with a·ȧ = 0.
        let (s, c) = theta.sin_cos();
        let one_minus_c = T::one() - c;
        let axd = a.cross(&da);
        let omega = a * dtheta + da * s + axd * one_minus_c;
        let domega = a * ddtheta
            + da * (dtheta + c * dtheta)
            + dda * s
            + axd * (s * dtheta)
            + a.cross(&dda) * one_minus_c;
        let r0 = self.initial;
        (r0 * rel, r0 * omega, r0 * domega)
    }
}

/// Vector part of the shortest-path quaternion error `Q Q_d⁻¹`.
pub fn orientation_error<T: Scalar>(
    actual: &UnitQuaternion<T>,
    desired: &UnitQuaternion<T>,
) -> Vector3<T> {
    let err = error_quaternion(actual, desired);
    err.imag()
}

fn error_quaternion<T: Scalar>(
    actual: &UnitQuaternion<T>,
    desired: &UnitQuaternion<T>,
) -> Quaternion<T> {
    let e = (actual * desired.inverse()).into_inner();
    if e.w < T::zero() {
        -e
    } else {
        e
    }
}

/// Rate of [`orientation_error`] given both angular velocities (world frame).
///
/// With `Q_e = (η, ε)`, `ε̇ = ½ (η (ω − ω_d) + (ω + ω_d) × ε)`.
pub fn orientation_error_rate<T: Scalar>(
    actual: &UnitQuaternion<T>,
    desired: &UnitQuaternion<T>,
    omega: &Vector3<T>,
    omega_d: &Vector3<T>,
) -> Vector3<T> {
    let e = error_quaternion(actual, desired);
    let eps = e.imag();
    ((omega - omega_d) * e.w + (omega + omega_d).cross(&eps)) * T::lit(0.5)
}

fn smoothstep<T: Scalar>(t: T, start: T, end: T) -> (T, T) {
    if t <= start {
        return (T::zero(), T::zero());
    }
    if t >= end {
        return (T::one(), T::zero());
    }
    let span = end - start;
    let u = (t - start) / span;
    let three = T::lit(3.0);
    let two = T::lit(2.0);
    let six = T::lit(6.0);
    (u * u * (three - two * u), six * u * (T::one() - u) / span)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind<T: Scalar> {
    /// Track the orientation profile; 3 equality rows.
    OrientationTrack { profile: OrientationProfile<T> },
    /// Keep the tool x and y inside `[lower, upper]`; 4 rows `+x, −x, +y, −y`.
    PositionBox { lower: [T; 2], upper: [T; 2] },
    /// Track the spiral (rows 0..3) and regulate to its center (rows 3..6).
    PositionTrackRegulate { spiral: Spiral<T> },
    /// Hold the joint configuration `target`; n rows with identity Jacobian.
    JointPosture { target: DVector<T> },
    /// Regulate the tool position along a fixed direction and along a second
    /// direction that turns into the first one between `align_start` and
    /// `align_end`. The two rows become parallel from `align_end` on.
    DirectionalPosition {
        target: Vector3<T>,
        fixed: Vector3<T>,
        moving: Vector3<T>,
        align_start: T,
        align_end: T,
    },
}

impl<T: Scalar> TaskKind<T> {
    pub fn dim(&self, dof: usize) -> usize {
        match self {
            TaskKind::OrientationTrack { .. } => 3,
            TaskKind::PositionBox { .. } => 4,
            TaskKind::PositionTrackRegulate { .. } => 6,
            TaskKind::JointPosture { .. } => dof,
            TaskKind::DirectionalPosition { .. } => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TaskKind::OrientationTrack { .. } => "orientation",
            TaskKind::PositionBox { .. } => "box",
            TaskKind::PositionTrackRegulate { .. } => "track-regulate",
            TaskKind::JointPosture { .. } => "posture",
            TaskKind::DirectionalPosition { .. } => "directional",
        }
    }
}

/// One task: its kind, priority level (0 is the highest), gain and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec<T: Scalar> {
    pub kind: TaskKind<T>,
    pub priority: usize,
    /// `K` in the reference `ν_d − K x̃`; SPD, one row/column per task row.
    pub gain: DMatrix<T>,
    /// SPD block-diagonal weight of the task rows.
    pub weight: DMatrix<T>,
    /// Diagonal block sizes of `weight`.
    pub blocks: Vec<usize>,
}

impl<T: Scalar> TaskSpec<T> {
    /// Task with gain `k·E` and unit weight split into one block per row for
    /// inequality tasks and a single block otherwise.
    pub fn uniform(kind: TaskKind<T>, priority: usize, k: T, dof: usize) -> Self {
        let m = kind.dim(dof);
        let blocks = match kind {
            TaskKind::PositionBox { .. } => vec![1; m],
            _ => vec![m],
        };
        TaskSpec {
            kind,
            priority,
            gain: DMatrix::identity(m, m) * k,
            weight: DMatrix::identity(m, m),
            blocks,
        }
    }

    pub fn validate(&self, dof: usize) -> Result<(), RobotError> {
        let m = self.kind.dim(dof);
        let label = self.kind.label();
        if self.gain.shape() != (m, m) || self.weight.shape() != (m, m) {
            return Err(RobotError::InvalidTask(format!(
                "{label}: gain and weight must be {m}x{m}"
            )));
        }
        if self.blocks.iter().sum::<usize>() != m {
            return Err(RobotError::InvalidTask(format!(
                "{label}: weight blocks must sum to {m}"
            )));
        }
        for (name, mat) in [("gain", &self.gain), ("weight", &self.weight)] {
            let asym = (mat - mat.transpose()).amax();
            if asym > T::lit(1e-12) * mat.amax().max(T::one()) || mat.clone().cholesky().is_none() {
                return Err(RobotError::InvalidTask(format!(
                    "{label}: {name} is not SPD"
                )));
            }
        }
        match &self.kind {
            TaskKind::PositionBox { lower, upper } => {
                if lower[0] >= upper[0] || lower[1] >= upper[1] {
                    return Err(RobotError::InvalidTask(
                        "box: lower must be below upper".into(),
                    ));
                }
            }
            TaskKind::JointPosture { target } if target.len() != dof => {
                return Err(RobotError::InvalidTask(format!(
                    "posture: target needs {dof} entries"
                )));
            }
            TaskKind::DirectionalPosition {
                fixed,
                moving,
                align_start,
                align_end,
                ..
            } if (fixed.norm() == T::zero()
                || moving.norm() == T::zero()
                || align_end <= align_start) =>
            {
                return Err(RobotError::InvalidTask(
                    "directional: directions must be nonzero and align_start < align_end".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_inequality(&self) -> bool {
        matches!(self.kind, TaskKind::PositionBox { .. })
    }
}

/// Velocity-level task data at one instant.
///
/// Rows read `J q̇ (= or ≥) b` with `b = ν_d − K x̃`; `db` is its time derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskKinematics<T: Scalar> {
    pub j: DMatrix<T>,
    pub dj: DMatrix<T>,
    /// Configuration error `x̃ = x − x_d`.
    pub x_err: DVector<T>,
    pub x_err_rate: DVector<T>,
    pub nu_d: DVector<T>,
    pub dnu_d: DVector<T>,
    pub sense: Vec<BoundSense<T>>,
    pub b: DVector<T>,
    pub db: DVector<T>,
}

fn stack3<T: Scalar>(parts: &[&Vector3<T>]) -> DVector<T> {
    DVector::from_iterator(
        parts.len() * 3,
        parts.iter().flat_map(|v| v.iter().copied()),
    )
}

/// Task Jacobian, its derivative, errors and references at time `t`.
pub fn task_kinematics<T: Scalar>(
    chain: &SerialChain<T>,
    spec: &TaskSpec<T>,
    state: &RobotState<T>,
    t: T,
) -> Result<TaskKinematics<T>, RobotError> {
    let n = chain.dof();
    chain.check_velocity(state)?;
    let kin = chain.kinematics(&state.q)?;
    let rates = chain.rates(&kin, &state.dq);
    let p = kin.tool.translation.vector;
    let (jp, jw) = chain.point_jacobian(&kin, n - 1, &p);
    let (djp, djw) = chain.point_jacobian_rate(&kin, &rates, n - 1, &p, &rates.tool_velocity);
    let pdot = rates.tool_velocity;

    let (j, dj, x_err, x_err_rate, nu_d, dnu_d) = match &spec.kind {
        TaskKind::OrientationTrack { profile } => {
            let (qd, wd, dwd) = profile.eval(t);
            let qa = kin.tool.rotation;
            let err = orientation_error(&qa, &qd);
            let err_rate = orientation_error_rate(&qa, &qd, &rates.tool_omega, &wd);
            (
                jw,
                djw,
                stack3(&[&err]),
                stack3(&[&err_rate]),
                stack3(&[&wd]),
                stack3(&[&dwd]),
            )
        }
        TaskKind::PositionBox { lower, upper } => {
            let mut j = DMatrix::zeros(4, n);
            let mut dj = DMatrix::zeros(4, n);
            let mut err = DVector::zeros(4);
            let mut rate = DVector::zeros(4);
            for axis in 0..2 {
                for (r, sign, bound) in [
                    (2 * axis, T::one(), lower[axis]),
                    (2 * axis + 1, -T::one(), upper[axis]),
                ] {
                    j.row_mut(r).copy_from(&(jp.row(axis) * sign));
                    dj.row_mut(r).copy_from(&(djp.row(axis) * sign));
                    err[r] = (p[axis] - bound) * sign;
                    rate[r] = pdot[axis] * sign;
                }
            }
            (j, dj, err, rate, DVector::zeros(4), DVector::zeros(4))
        }
        TaskKind::PositionTrackRegulate { spiral } => {
            let (s, ds, dds) = spiral.eval(t);
            let mut j = DMatrix::zeros(6, n);
            let mut dj = DMatrix::zeros(6, n);
            for block in 0..2 {
                j.rows_mut(3 * block, 3).copy_from(&jp);
                dj.rows_mut(3 * block, 3).copy_from(&djp);
            }
            let zero = Vector3::zeros();
            (
                j,
                dj,
                stack3(&[&(p - s), &(p - spiral.center)]),
                stack3(&[&(pdot - ds), &pdot]),
                stack3(&[&ds, &zero]),
                stack3(&[&dds, &zero]),
            )
        }
        TaskKind::JointPosture { target } => (
            DMatrix::identity(n, n),
            DMatrix::zeros(n, n),
            &state.q - target,
            state.dq.clone(),
            DVector::zeros(n),
            DVector::zeros(n),
        ),
        TaskKind::DirectionalPosition {
            target,
            fixed,
            moving,
            align_start,
            align_end,
        } => {
            let u = fixed.normalize();
            let off = moving - u * u.dot(moving);
            let v = if off.norm() > T::lit(1e-12) {
                off.normalize()
            } else {
                u
            };
            let phi0 = moving
                .normalize()
                .dot(&u)
                .max(-T::one())
                .min(T::one())
                .acos();
            let (s, ds) = smoothstep(t, *align_start, *align_end);
            let phi = phi0 * (T::one() - s);
            let dphi = -phi0 * ds;
            let (sp, cp) = phi.sin_cos();
            let d2 = u * cp + v * sp;
            let dd2 = (u * -sp + v * cp) * dphi;
            let mut j = DMatrix::zeros(2, n);
            let mut dj = DMatrix::zeros(2, n);
            j.row_mut(0).copy_from(&(u.transpose() * &jp));
            j.row_mut(1).copy_from(&(d2.transpose() * &jp));
            dj.row_mut(0).copy_from(&(u.transpose() * &djp));
            dj.row_mut(1)
                .copy_from(&(dd2.transpose() * &jp + d2.transpose() * &djp));
            let e = p - target;
            let err = DVector::from_vec(vec![u.dot(&e), d2.dot(&e)]);
            let rate = DVector::from_vec(vec![u.dot(&pdot), dd2.dot(&e) + d2.dot(&pdot)]);
            (j, dj, err, rate, DVector::zeros(2), DVector::zeros(2))
        }
    };

    let b = &nu_d - &spec.gain * &x_err;
    let db = &dnu_d - &spec.gain * &x_err_rate;
    let sense = if spec.is_inequality() {
        vec![BoundSense::Lower; b.len()]
    } else {
        vec![BoundSense::Equality; b.len()]
    };
    Ok(TaskKinematics {
        j,
        dj,
        x_err,
        x_err_rate,
        nu_d,
        dnu_d,
        sense,
        b,
        db,
    })
}

/// Time derivative of the task Jacobian along the velocity of `state`.
pub fn jacobian_dot<T: Scalar>(
    chain: &SerialChain<T>,
    spec: &TaskSpec<T>,
    state: &RobotState<T>,
    t: T,
) -> Result<DMatrix<T>, RobotError> {
    Ok(task_kinematics(chain, spec, state, t)?.dj)
}
