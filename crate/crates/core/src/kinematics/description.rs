//! Robot description files.
//!
//! ```toml
//! name = "panda"
//! ee_link = 7                        # optional, defaults to the last link
//! manipulability_rows = [0, 1, 2, 3, 4, 5]  # optional
//!
//! [tool]                             # optional TCP offset from the ee link
//! xyz = [0.0, 0.0, 0.2104]
//! rpy = [0.0, 0.0, -0.785398]
//!
//! [[joints]]
//! name = "joint1"
//! xyz = [0.0, 0.0, 0.333]            # parent link -> joint frame, translation (m)
//! rpy = [0.0, 0.0, 0.0]              # roll-pitch-yaw, R = Rz(yaw) Ry(pitch) Rx(roll)
//! axis = [0.0, 0.0, 1.0]             # rotation axis in the joint frame
//! limits = [-2.8973, 2.8973]         # rad
//! velocity = [-2.175, 2.175]         # rad/s
//!
//! [[capsules]]
//! link = 1                           # 0 is the base
//! a = [0.0, 0.0, -0.19]              # segment end points in the link frame (m)
//! b = [0.0, 0.0, -0.03]
//! radius = 0.08
//! ```

use std::path::Path;

use nalgebra::{DVector, Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::Deserialize;

use super::{Capsule, Joint, RobotModel};
use crate::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotFile {
    name: String,
    ee_link: Option<usize>,
    manipulability_rows: Option<Vec<usize>>,
    tool: Option<FrameSpec>,
    joints: Vec<JointSpec>,
    #[serde(default)]
    capsules: Vec<CapsuleSpec>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FrameSpec {
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    name: String,
    #[serde(default)]
    xyz: [f64; 3],
    #[serde(default)]
    rpy: [f64; 3],
    #[serde(default = "default_axis")]
    axis: [f64; 3],
    limits: [f64; 2],
    velocity: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CapsuleSpec {
    link: usize,
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

fn frame(xyz: [f64; 3], rpy: [f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(xyz[0], xyz[1], xyz[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

pub fn parse_robot(text: &str) -> Result<RobotModel> {
    let file: RobotFile =
        toml::from_str(text).map_err(|e| Error::Argument(format!("robot description: {e}")))?;
    build(file)
}

pub fn load_robot(path: &Path) -> Result<RobotModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RobotFile = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
    build(file).map_err(|e| Error::parse(path, e))
}

fn build(file: RobotFile) -> Result<RobotModel> {
    let n = file.joints.len();
    let mut joints = Vec::with_capacity(n);
    for j in &file.joints {
        let axis = Vector3::from(j.axis);
        if !(axis.norm() > 1e-12) {
            return Err(Error::Argument(format!("joint {} has a zero axis", j.name)));
        }
        joints.push(Joint {
            name: j.name.clone(),
            origin: frame(j.xyz, j.rpy),
            axis: Unit::new_normalize(axis),
        });
    }
    let column = |f: &dyn Fn(&JointSpec) -> f64| DVector::from_iterator(n, file.joints.iter().map(f));
    let tool = file.tool.unwrap_or_default();
    let model = RobotModel {
        name: file.name,
        q_min: column(&|j| j.limits[0]),
        q_max: column(&|j| j.limits[1]),
        qd_min: column(&|j| j.velocity[0]),
        qd_max: column(&|j| j.velocity[1]),
        joints,
        tool: frame(tool.xyz, tool.rpy),
        ee_link: file.ee_link.unwrap_or(n),
        capsules: file
            .capsules
            .into_iter()
            .map(|c| Capsule {
                link: c.link,
                a: c.a.into(),
                b: c.b.into(),
                radius: c.radius,
            })
            .collect(),
        manipulability_rows: file.manipulability_rows.unwrap_or_else(|| (0..6).collect()),
    };
    model.validate()?;
    Ok(model)
}
