use nalgebra::{
    DMatrix, DVector, Isometry3, Matrix3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3,
};
use serde::Deserialize;

use super::RobotError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
}

/// Joint frame: `origin` maps the parent frame to the joint frame, and the
/// joint then rotates about (or slides along) `axis` in that frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint<T: Scalar> {
    pub name: String,
    pub kind: JointType,
    pub origin: Isometry3<T>,
    pub axis: Unit<Vector3<T>>,
    pub limits: Option<(T, T)>,
}

/// Inertial data of the body moved by a joint, expressed in the joint frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Link<T: Scalar> {
    pub mass: T,
    pub com: Vector3<T>,
    /// Rotational inertia about the center of mass.
    pub inertia: Matrix3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerialChain<T: Scalar> {
    pub name: String,
    pub joints: Vec<Joint<T>>,
    pub links: Vec<Link<T>>,
    /// Tool center point relative to the last joint frame.
    pub tool: Isometry3<T>,
    pub gravity: Vector3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState<T: Scalar> {
    pub q: DVector<T>,
    pub dq: DVector<T>,
}

impl<T: Scalar> RobotState<T> {
    pub fn at_rest(q: DVector<T>) -> Self {
        let n = q.len();
        RobotState {
            q,
            dq: DVector::zeros(n),
        }
    }
}

/// World-frame quantities of a chain at one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainKinematics<T: Scalar> {
    /// Joint axes.
    pub axes: Vec<Vector3<T>>,
    /// Joint frame origins (before the joint motion).
    pub origins: Vec<Vector3<T>>,
    /// Link frames (after the joint motion).
    pub frames: Vec<Isometry3<T>>,
    /// Link centers of mass.
    pub coms: Vec<Vector3<T>>,
    pub tool: Isometry3<T>,
}

/// Velocity-level derivatives of [`ChainKinematics`] along `dq`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ChainRates<T: Scalar> {
    pub axes: Vec<Vector3<T>>,
    pub origins: Vec<Vector3<T>>,
    /// Angular velocity of each link.
    pub omegas: Vec<Vector3<T>>,
    pub com_velocities: Vec<Vector3<T>>,
    pub tool_velocity: Vector3<T>,
    pub tool_omega: Vector3<T>,
}

fn joint_motion<T: Scalar>(joint: &Joint<T>, q: T) -> Isometry3<T> {
    match joint.kind {
        JointType::Revolute => Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&joint.axis, q),
        ),
        JointType::Prismatic => Isometry3::from_parts(
            Translation3::from(joint.axis.into_inner() * q),
            UnitQuaternion::identity(),
        ),
    }
}

impl<T: Scalar> SerialChain<T> {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        if self.joints.is_empty() {
            return Err(RobotError::InvalidChain(
                "a chain needs at least one joint".into(),
            ));
        }
        if self.joints.len() != self.links.len() {
            return Err(RobotError::InvalidChain(format!(
                "{} joints but {} links",
                self.joints.len(),
                self.links.len()
            )));
        }
        let tol = T::lit(1e-12);
        for (i, link) in self.links.iter().enumerate() {
            if link.mass <= T::zero() {
                return Err(RobotError::InvalidChain(format!(
                    "link {i} has non-positive mass"
                )));
            }
            let asym = (link.inertia - link.inertia.transpose()).amax();
            if asym > tol * link.inertia.amax().max(T::one()) {
                return Err(RobotError::InvalidChain(format!(
                    "link {i} inertia is not symmetric"
                )));
            }
            // Point masses are allowed, so the rotational inertia only has to be PSD.
            let eig = link.inertia.symmetric_eigenvalues();
            if eig.min() < -tol * link.inertia.amax().max(T::one()) {
                return Err(RobotError::InvalidChain(format!(
                    "link {i} inertia is not PSD"
                )));
            }
        }
        Ok(())
    }

    /// Joint limits that `q` violates, as joint indices. Limits are advisory.
    pub fn limit_violations(&self, q: &DVector<T>) -> Vec<usize> {
        self.joints
            .iter()
            .enumerate()
            .filter(|(i, j)| j.limits.is_some_and(|(lo, hi)| q[*i] < lo || q[*i] > hi))
            .map(|(i, _)| i)
            .collect()
    }

    fn check_dim(&self, v: &DVector<T>) -> Result<(), RobotError> {
        if v.len() != self.dof() {
            return Err(RobotError::DimensionMismatch(format!(
                "expected {} joint values, got {}",
                self.dof(),
                v.len()
            )));
        }
        Ok(())
    }

    pub fn kinematics(&self, q: &DVector<T>) -> Result<ChainKinematics<T>, RobotError> {
        self.check_dim(q)?;
        let n = self.dof();
        let mut axes = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut frames = Vec::with_capacity(n);
        let mut coms = Vec::with_capacity(n);
        let mut pose = Isometry3::identity();
        for (i, joint) in self.joints.iter().enumerate() {
            let before = pose * joint.origin;
            axes.push(before.rotation * joint.axis.into_inner());
            origins.push(before.translation.vector);
            pose = before * joint_motion(joint, q[i]);
            coms.push(pose.transform_point(&self.links[i].com.into()).coords);
            frames.push(pose);
        }
        Ok(ChainKinematics {
            axes,
            origins,
            frames,
            coms,
            tool: pose * self.tool,
        })
    }

    /// Rates of the world-frame axes, origins and points along `dq`.
    pub(crate) fn rates(&self, kin: &ChainKinematics<T>, dq: &DVector<T>) -> ChainRates<T> {
        let n = self.dof();
        let mut axes = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut omegas = Vec::with_capacity(n);
        let mut com_velocities = Vec::with_capacity(n);
        // Twist of the frame preceding joint i: angular velocity and the
        // linear velocity of the world origin point attached to it.
        let mut omega = Vector3::zeros();
        let mut v0 = Vector3::zeros();
        let point_velocity =
            |omega: &Vector3<T>, v0: &Vector3<T>, p: &Vector3<T>| v0 + omega.cross(p);
        for i in 0..n {
            let z = kin.axes[i];
            axes.push(omega.cross(&z));
            origins.push(point_velocity(&omega, &v0, &kin.origins[i]));
            match self.joints[i].kind {
                JointType::Revolute => {
                    let w = z * dq[i];
                    // Rotation about an axis through o_i: v0 gains −w × o_i.
                    v0 -= w.cross(&kin.origins[i]);
                    omega += w;
                }
                JointType::Prismatic => v0 += z * dq[i],
            }
            omegas.push(omega);
            com_velocities.push(point_velocity(&omega, &v0, &kin.coms[i]));
        }
        ChainRates {
            axes,
            origins,
            omegas,
            com_velocities,
            tool_velocity: point_velocity(&omega, &v0, &kin.tool.translation.vector),
            tool_omega: omega,
        }
    }

    /// Linear and angular Jacobians (3×n each) of a point attached to link `link`.
    pub fn point_jacobian(
        &self,
        kin: &ChainKinematics<T>,
        link: usize,
        point: &Vector3<T>,
    ) -> (DMatrix<T>, DMatrix<T>) {
        let n = self.dof();
        let mut jv = DMatrix::zeros(3, n);
        let mut jw = DMatrix::zeros(3, n);
        for j in 0..=link {
            let z = kin.axes[j];
            match self.joints[j].kind {
                JointType::Revolute => {
                    jv.fixed_view_mut::<3, 1>(0, j)
                        .copy_from(&z.cross(&(point - kin.origins[j])));
                    jw.fixed_view_mut::<3, 1>(0, j).copy_from(&z);
                }
                JointType::Prismatic => jv.fixed_view_mut::<3, 1>(0, j).copy_from(&z),
            }
        }
        (jv, jw)
    }

    /// Time derivative of [`Self::point_jacobian`] along `dq`, given the point velocity.
    pub(crate) fn point_jacobian_rate(
        &self,
        kin: &ChainKinematics<T>,
        rates: &ChainRates<T>,
        link: usize,
        point: &Vector3<T>,
        point_velocity: &Vector3<T>,
    ) -> (DMatrix<T>, DMatrix<T>) {
        let n = self.dof();
        let mut djv = DMatrix::zeros(3, n);
        let mut djw = DMatrix::zeros(3, n);
        for j in 0..=link {
            let z = kin.axes[j];
            let dz = rates.axes[j];
            match self.joints[j].kind {
                JointType::Revolute => {
                    let r = point - kin.origins[j];
                    let dr = point_velocity - rates.origins[j];
                    djv.fixed_view_mut::<3, 1>(0, j)
                        .copy_from(&(dz.cross(&r) + z.cross(&dr)));
                    djw.fixed_view_mut::<3, 1>(0, j).copy_from(&dz);
                }
                JointType::Prismatic => djv.fixed_view_mut::<3, 1>(0, j).copy_from(&dz),
            }
        }
        (djv, djw)
    }

    /// Tool position and orientation.
    pub fn tool_pose(&self, q: &DVector<T>) -> Result<Isometry3<T>, RobotError> {
        Ok(self.kinematics(q)?.tool)
    }

    /// Linear (rows 0..3) and angular (rows 3..6) Jacobian of the tool.
    pub fn tool_jacobian(&self, q: &DVector<T>) -> Result<DMatrix<T>, RobotError> {
        let kin = self.kinematics(q)?;
        let (jv, jw) = self.point_jacobian(&kin, self.dof() - 1, &kin.tool.translation.vector);
        let mut j = DMatrix::zeros(6, self.dof());
        j.rows_mut(0, 3).copy_from(&jv);
        j.rows_mut(3, 3).copy_from(&jw);
        Ok(j)
    }

    /// Time derivative of [`Self::tool_jacobian`] along `dq`.
    pub fn tool_jacobian_dot(&self, state: &RobotState<T>) -> Result<DMatrix<T>, RobotError> {
        self.check_dim(&state.dq)?;
        let kin = self.kinematics(&state.q)?;
        let rates = self.rates(&kin, &state.dq);
        let p = kin.tool.translation.vector;
        let (djv, djw) =
            self.point_jacobian_rate(&kin, &rates, self.dof() - 1, &p, &rates.tool_velocity);
        let mut dj = DMatrix::zeros(6, self.dof());
        dj.rows_mut(0, 3).copy_from(&djv);
        dj.rows_mut(3, 3).copy_from(&djw);
        Ok(dj)
    }
}

/// `Rz(yaw) Ry(pitch) Rx(roll)`, the URDF convention.
pub fn rpy_rotation<T: Scalar>(rpy: [T; 3]) -> UnitQuaternion<T> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]))
}

pub(crate) fn skew<T: Scalar>(v: &Vector3<T>) -> Matrix3<T> {
    v.cross_matrix()
}
