//! TOML chain description.
//!
//! ```toml
//! name = "two-link"
//! gravity = [0.0, 0.0, -9.81]
//!
//! [tool]              # optional, identity by default
//! xyz = [1.0, 0.0, 0.0]
//! rpy = [0.0, 0.0, 0.0]
//!
//! [[joint]]
//! name = "shoulder"
//! type = "revolute"   # or "prismatic"
//! xyz = [0.0, 0.0, 0.0]
//! rpy = [0.0, 0.0, 0.0]
//! axis = [0.0, 0.0, 1.0]
//! limits = [-3.0, 3.0]            # optional
//! mass = 1.0
//! com = [1.0, 0.0, 0.0]           # in the joint frame, after the joint motion
//! inertia = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]   # ixx iyy izz ixy ixz iyz about the com
//! ```
//!
//! `xyz`/`rpy` place the joint frame in its parent frame with the URDF
//! convention `Rz(yaw) Ry(pitch) Rx(roll)`.

use nalgebra::{Isometry3, Matrix3, Translation3, Unit, Vector3};
use serde::Deserialize;

use super::chain::{rpy_rotation, Joint, JointType, Link, SerialChain};
use super::RobotError;
use crate::scalar::Scalar;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    name: Option<String>,
    gravity: [f64; 3],
    tool: Option<FrameFile>,
    joint: Vec<JointFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameFile {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointFile {
    name: String,
    #[serde(rename = "type")]
    kind: JointType,
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
    axis: [f64; 3],
    limits: Option<[f64; 2]>,
    mass: f64,
    #[serde(default)]
    com: [f64; 3],
    #[serde(default)]
    inertia: [f64; 6],
}

fn vec3<T: Scalar>(v: [f64; 3]) -> Vector3<T> {
    Vector3::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]))
}

fn frame<T: Scalar>(xyz: [f64; 3], rpy: [f64; 3]) -> Isometry3<T> {
    Isometry3::from_parts(
        Translation3::from(vec3::<T>(xyz)),
        rpy_rotation([T::lit(rpy[0]), T::lit(rpy[1]), T::lit(rpy[2])]),
    )
}

/// Parses and validates a chain description.
pub fn parse_chain<T: Scalar>(text: &str) -> Result<SerialChain<T>, RobotError> {
    let file: ChainFile = toml::from_str(text).map_err(|e| RobotError::Parse(e.to_string()))?;
    let mut joints = Vec::with_capacity(file.joint.len());
    let mut links = Vec::with_capacity(file.joint.len());
    for j in file.joint {
        let axis = vec3::<T>(j.axis);
        if axis.norm() == T::zero() {
            return Err(RobotError::InvalidChain(format!(
                "joint `{}` has a zero axis",
                j.name
            )));
        }
        if let Some([lo, hi]) = j.limits {
            if lo >= hi {
                return Err(RobotError::InvalidChain(format!(
                    "joint `{}` limits are reversed",
                    j.name
                )));
            }
        }
        let [ixx, iyy, izz, ixy, ixz, iyz] = j.inertia.map(T::lit);
        links.push(Link {
            mass: T::lit(j.mass),
            com: vec3(j.com),
            inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
        });
        joints.push(Joint {
            name: j.name,
            kind: j.kind,
            origin: frame(j.xyz, j.rpy),
            axis: Unit::new_normalize(axis),
            limits: j.limits.map(|[lo, hi]| (T::lit(lo), T::lit(hi))),
        });
    }
    let chain = SerialChain {
        name: file.name.unwrap_or_else(|| "chain".to_string()),
        joints,
        links,
        tool: file
            .tool
            .map(|t| frame(t.xyz, t.rpy))
            .unwrap_or_else(Isometry3::identity),
        gravity: vec3(file.gravity),
    };
    chain.validate()?;
    Ok(chain)
}
