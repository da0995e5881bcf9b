//! Serial-chain forward kinematics, geometric Jacobians and the manipulability index.
//!
//! Link `0` is the fixed base; link `i` is the body rotated by joint `i`. Jacobians are
//! world-frame geometric Jacobians with the linear rows first.

mod description;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Unit, UnitQuaternion, Vector3};

use crate::liegroup::RotationSO3;
use crate::{Error, Result};

pub use description::{load_robot, parse_robot};

/// Description of the Franka Emika Panda shipped with the crate.
pub const PANDA_DESCRIPTION: &str = include_str!("../../data/panda.toml");

/// Panda "ready" configuration (rad).
pub const PANDA_READY: [f64; 7] = [0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785];

/// The shipped Panda model.
pub fn panda() -> RobotModel {
    parse_robot(PANDA_DESCRIPTION).expect("shipped Panda description is valid")
}

/// A revolute joint: a fixed transform from the parent link followed by a rotation about `axis`.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
}

/// Line segment swept by a sphere, attached to a link.
#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub link: usize,
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<Joint>,
    pub q_min: DVector<f64>,
    pub q_max: DVector<f64>,
    pub qd_min: DVector<f64>,
    pub qd_max: DVector<f64>,
    /// Transform from the end-effector link frame to the tool centre point.
    pub tool: Isometry3<f64>,
    pub ee_link: usize,
    pub capsules: Vec<Capsule>,
    /// Rows of the 6×n Jacobian that enter the manipulability index.
    pub manipulability_rows: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EePose {
    pub position: Vector3<f64>,
    pub orientation: RotationSO3,
}

/// Forward kinematics of one configuration.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// World pose of each link frame; index 0 is the base.
    pub link_frames: Vec<Isometry3<f64>>,
    /// World-frame rotation axis of joint `i` (0-based), i.e. of link `i + 1`.
    pub joint_axes: Vec<Vector3<f64>>,
    /// World-frame origin of joint `i` (0-based).
    pub joint_origins: Vec<Vector3<f64>>,
    pub ee: EePose,
}

impl RobotModel {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Number of links carrying geometry, base included.
    pub fn link_count(&self) -> usize {
        self.joints.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dof();
        if n == 0 {
            return Err(Error::Argument("robot has no joints".into()));
        }
        for (name, v) in [
            ("q_min", &self.q_min),
            ("q_max", &self.q_max),
            ("qd_min", &self.qd_min),
            ("qd_max", &self.qd_max),
        ] {
            if v.len() != n {
                return Err(Error::Argument(format!("{name} has {} entries, expected {n}", v.len())));
            }
        }
        for i in 0..n {
            if !(self.q_min[i] < self.q_max[i]) {
                return Err(Error::Argument(format!("joint {} has q_min >= q_max", i + 1)));
            }
            if !(self.qd_min[i] < self.qd_max[i]) {
                return Err(Error::Argument(format!("joint {} has qd_min >= qd_max", i + 1)));
            }
        }
        if self.ee_link == 0 || self.ee_link > n {
            return Err(Error::Argument(format!("ee_link {} out of range 1..={n}", self.ee_link)));
        }
        for c in &self.capsules {
            if !(c.radius > 0.0) {
                return Err(Error::Argument(format!("capsule on link {} has radius <= 0", c.link)));
            }
            if c.link > n {
                return Err(Error::Argument(format!("capsule link {} out of range", c.link)));
            }
        }
        if self.manipulability_rows.is_empty()
            || self.manipulability_rows.iter().any(|&r| r >= 6)
        {
            return Err(Error::Argument("manipulability rows must be within 0..6".into()));
        }
        Ok(())
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Kinematics {
        let n = self.dof();
        debug_assert_eq!(q.len(), n);
        let mut link_frames = Vec::with_capacity(n + 1);
        let mut joint_axes = Vec::with_capacity(n);
        let mut joint_origins = Vec::with_capacity(n);
        let mut frame = Isometry3::identity();
        link_frames.push(frame);
        for (joint, &qi) in self.joints.iter().zip(q.iter()) {
            let joint_frame = frame * joint.origin;
            joint_axes.push(joint_frame.rotation * joint.axis.into_inner());
            joint_origins.push(joint_frame.translation.vector);
            frame = joint_frame * UnitQuaternion::from_axis_angle(&joint.axis, qi);
            link_frames.push(frame);
        }
        let tcp = link_frames[self.ee_link] * self.tool;
        let ee = EePose {
            position: tcp.translation.vector,
            orientation: RotationSO3::from_matrix_unchecked(
                *tcp.rotation.to_rotation_matrix().matrix(),
            ),
        };
        Kinematics {
            link_frames,
            joint_axes,
            joint_origins,
            ee,
        }
    }

    /// 6×n world-frame Jacobian of the tool centre point.
    pub fn geometric_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let kin = self.forward_kinematics(q);
        kin.point_jacobian(self.ee_link, &kin.ee.position)
    }

    pub fn manipulability(&self, q: &DVector<f64>) -> f64 {
        let jac = self.geometric_jacobian(q);
        manipulability_of(&self.select_rows(&jac))
    }

    /// Gradient of the manipulability index, central differences with step `1e-6`.
    pub fn manipulability_gradient(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        self.manipulability_gradient_with(q, GradientMode::FiniteDifference)
    }

    pub fn manipulability_gradient_with(
        &self,
        q: &DVector<f64>,
        mode: GradientMode,
    ) -> Result<DVector<f64>> {
        let mu = self.manipulability(q);
        if !(mu > 1e-12) {
            return Err(Error::GradientAtSingularity { mu });
        }
        match mode {
            GradientMode::FiniteDifference => {
                const STEP: f64 = 1e-6;
                let mut grad = DVector::zeros(self.dof());
                let mut qp = q.clone();
                for i in 0..self.dof() {
                    qp[i] = q[i] + STEP;
                    let up = self.manipulability(&qp);
                    qp[i] = q[i] - STEP;
                    let down = self.manipulability(&qp);
                    qp[i] = q[i];
                    grad[i] = (up - down) / (2.0 * STEP);
                }
                Ok(grad)
            }
            GradientMode::Analytic => Ok(self.analytic_manipulability_gradient(q, mu)),
        }
    }

    /// `∂μ/∂q_i = μ · tr((J Jᵀ)⁻¹ (∂J/∂q_i) Jᵀ)`.
    fn analytic_manipulability_gradient(&self, q: &DVector<f64>, mu: f64) -> DVector<f64> {
        let kin = self.forward_kinematics(q);
        let l = self.ee_link;
        let pe = kin.ee.position;
        let full = kin.point_jacobian(l, &pe);
        let jac = self.select_rows(&full);
        let gram = &jac * jac.transpose();
        let gram_inv = gram
            .clone()
            .try_inverse()
            .unwrap_or_else(|| gram.pseudo_inverse(1e-14).expect("svd"));
        let n = self.dof();
        let mut grad = DVector::zeros(n);
        for i in 0..n {
            if i >= l {
                continue;
            }
            let zi = kin.joint_axes[i];
            let pi = kin.joint_origins[i];
            let mut djac = DMatrix::zeros(6, n);
            for j in 0..l {
                let zj = kin.joint_axes[j];
                let pj = kin.joint_origins[j];
                let (dz, dr) = if i < j {
                    (zi.cross(&zj), zi.cross(&(pe - pj)))
                } else {
                    (Vector3::zeros(), zi.cross(&(pe - pi)))
                };
                let dlin = dz.cross(&(pe - pj)) + zj.cross(&dr);
                djac.fixed_view_mut::<3, 1>(0, j).copy_from(&dlin);
                djac.fixed_view_mut::<3, 1>(3, j).copy_from(&dz);
            }
            let dsel = self.select_rows(&djac);
            grad[i] = mu * (&gram_inv * dsel * jac.transpose()).trace();
        }
        grad
    }

    fn select_rows(&self, jac: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.manipulability_rows.len(), jac.ncols(), |r, c| {
            jac[(self.manipulability_rows[r], c)]
        })
    }

    /// A uniformly random configuration inside the joint limits.
    pub fn random_configuration<R: rand::Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.dof(), |i, _| rng.random_range(self.q_min[i]..self.q_max[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    FiniteDifference,
    Analytic,
}

/// `sqrt(det(JJᵀ))`. Determinants at round-off level relative to `(tr(JJᵀ)/m)^m` are
/// reported as an exact zero.
pub fn manipulability_of(jac: &DMatrix<f64>) -> f64 {
    let jjt = jac * jac.transpose();
    let m = jjt.nrows() as i32;
    let scale = (jjt.trace() / m as f64).powi(m);
    let det = jjt.determinant();
    if det > 1e-13 * scale {
        det.sqrt()
    } else {
        0.0
    }
}

impl Kinematics {
    /// World-frame 6×n Jacobian of a point rigidly attached to `link`, given in world
    /// coordinates. Joints distal to `link` contribute zero columns.
    pub fn point_jacobian(&self, link: usize, point: &Vector3<f64>) -> DMatrix<f64> {
        let n = self.joint_axes.len();
        let mut jac = DMatrix::zeros(6, n);
        for j in 0..link.min(n) {
            let z = self.joint_axes[j];
            let lin = z.cross(&(point - self.joint_origins[j]));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(&z);
        }
        jac
    }

    /// Linear rows of [`Self::point_jacobian`], as a 3×n matrix.
    pub fn point_jacobian_linear(&self, link: usize, point: &Vector3<f64>) -> DMatrix<f64> {
        let n = self.joint_axes.len();
        let mut jac = DMatrix::zeros(3, n);
        for j in 0..link.min(n) {
            let lin = self.joint_axes[j].cross(&(point - self.joint_origins[j]));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        }
        jac
    }

    pub fn to_world(&self, link: usize, local: &Vector3<f64>) -> Vector3<f64> {
        self.link_frames[link].transform_point(&(*local).into()).coords
    }

    pub fn ee_rotation(&self) -> &Matrix3<f64> {
        self.ee.orientation.matrix()
    }
}

#[cfg(test)]
pub(crate) mod test_models {
    use super::*;

    /// Planar arm in the xy-plane with unit links and position-only (x, y) manipulability.
    pub fn planar_two_link() -> RobotModel {
        let joint = |name: &str, x: f64| Joint {
            name: name.into(),
            origin: Isometry3::translation(x, 0.0, 0.0),
            axis: Vector3::z_axis(),
        };
        RobotModel {
            name: "planar2".into(),
            joints: vec![joint("j1", 0.0), joint("j2", 1.0)],
            q_min: DVector::from_element(2, -3.0),
            q_max: DVector::from_element(2, 3.0),
            qd_min: DVector::from_element(2, -1.0),
            qd_max: DVector::from_element(2, 1.0),
            tool: Isometry3::translation(1.0, 0.0, 0.0),
            ee_link: 2,
            capsules: vec![
                Capsule { link: 1, a: Vector3::zeros(), b: Vector3::x(), radius: 0.05 },
                Capsule { link: 2, a: Vector3::zeros(), b: Vector3::x(), radius: 0.05 },
            ],
            manipulability_rows: vec![0, 1],
        }
    }
}
