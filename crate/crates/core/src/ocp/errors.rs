//! Contouring, lag and orientation errors and their state Jacobians.
//!
//! `e = p_r(s) − p_ee(q)` splits along the unit path tangent into `e_l = t̂t̂ᵀe` and
//! `e_c = e − e_l`; `e_o = Log(R_r(s)ᵀ R_ee(q))`.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::OcpState;
use crate::kinematics::{Kinematics, RobotModel};
use crate::liegroup::{log_map, right_jacobian_inv, RotationSO3};
use crate::pathspline::PathSpline;
use crate::{Error, Result};

/// Orientation errors at or beyond this angle are rejected.
const MAX_ORIENTATION_ERROR: f64 = std::f64::consts::PI - 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathErrors {
    pub e: Vector3<f64>,
    pub e_l: Vector3<f64>,
    pub e_c: Vector3<f64>,
    pub e_o: Vector3<f64>,
}

/// 3×(n+2) Jacobians with respect to `[q, s, v_s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorJacobians {
    pub de_c: DMatrix<f64>,
    pub de_l: DMatrix<f64>,
    pub de_o: DMatrix<f64>,
}

/// Errors of a time-indexed reference pose; Jacobians are with respect to `q` only.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingErrors {
    pub e: Vector3<f64>,
    pub e_o: Vector3<f64>,
    pub de: DMatrix<f64>,
    pub de_o: DMatrix<f64>,
}

fn orientation_error(r_ref: &RotationSO3, r_ee: &RotationSO3) -> Result<Vector3<f64>> {
    let e_o = log_map(&(r_ref.transpose() * *r_ee))?;
    if e_o.norm() >= MAX_ORIENTATION_ERROR {
        return Err(Error::Domain(format!(
            "orientation error of {:.4} rad is too close to a half turn",
            e_o.norm()
        )));
    }
    Ok(e_o)
}

pub fn path_errors(spline: &PathSpline, model: &RobotModel, x: &OcpState) -> Result<PathErrors> {
    let kin = model.forward_kinematics(&x.q);
    path_errors_at(spline, &kin, x.s)
}

/// Predicted states may overshoot the path end; the reference is held at `s ∈ [0, 1]`.
pub(crate) fn path_errors_at(spline: &PathSpline, kin: &Kinematics, s: f64) -> Result<PathErrors> {
    let s = s.clamp(0.0, 1.0);
    let pos = spline.sample_position(s);
    let tan = spline.unit_tangent(s)?;
    let e = pos.position - kin.ee.position;
    let e_l = tan.tangent * tan.tangent.dot(&e);
    let e_o = orientation_error(&spline.sample_orientation(s).rotation, &kin.ee.orientation)?;
    Ok(PathErrors {
        e,
        e_l,
        e_c: e - e_l,
        e_o,
    })
}

pub fn error_jacobians(spline: &PathSpline, model: &RobotModel, x: &OcpState) -> Result<ErrorJacobians> {
    let kin = model.forward_kinematics(&x.q);
    let errors = path_errors_at(spline, &kin, x.s)?;
    error_jacobians_at(spline, model, &kin, x.s, &errors)
}

pub(crate) fn error_jacobians_at(
    spline: &PathSpline,
    model: &RobotModel,
    kin: &Kinematics,
    s: f64,
    errors: &PathErrors,
) -> Result<ErrorJacobians> {
    let n = model.dof();
    let s = s.clamp(0.0, 1.0);
    let jac = kin.point_jacobian(model.ee_link, &kin.ee.position);
    let j_pos = jac.rows(0, 3);
    let j_ori = jac.rows(3, 3);

    let pos = spline.sample_position(s);
    let tan = spline.unit_tangent(s)?;
    let t = tan.tangent;
    let dt = tan.dtangent_ds;
    let e = errors.e;

    // ∂e/∂x = [−J_pos, p′, 0]
    let mut de = DMatrix::zeros(3, n + 2);
    de.columns_mut(0, n).copy_from(&(-j_pos));
    de.column_mut(n).copy_from(&pos.dp_ds);

    // ∂e_l = ∂t̂ (t̂ᵀe) + t̂ (∂t̂ᵀ e) + t̂t̂ᵀ ∂e, with ∂t̂/∂x = [0, t̂′, 0].
    let proj: Matrix3<f64> = t * t.transpose();
    let mut de_l: DMatrix<f64> = DMatrix::from_iterator(3, n + 2, (proj * &de).iter().copied());
    let ds_extra = dt * t.dot(&e) + t * dt.dot(&e);
    for r in 0..3 {
        de_l[(r, n)] += ds_extra[r];
    }
    let de_c: DMatrix<f64> = &de - &de_l;

    // ∂e_o/∂q = J_r⁻¹(e_o) R_eeᵀ J_ori; ∂e_o/∂s = −J_r⁻¹(e_o) R_eeᵀ R_r φ′.
    let jr_inv = right_jacobian_inv(&errors.e_o)?;
    let r_ee_t = kin.ee_rotation().transpose();
    let left = jr_inv * r_ee_t;
    let orient = spline.sample_orientation(s);
    let phi_world = orient.rotation.matrix() * orient.phi_prime;
    let mut de_o = DMatrix::zeros(3, n + 2);
    de_o.columns_mut(0, n).copy_from(&(left * j_ori));
    de_o.column_mut(n).copy_from(&(-(left * phi_world)));

    Ok(ErrorJacobians { de_c, de_l, de_o })
}

/// Errors and `q`-Jacobians against the reference pose at a fixed `s_ref`.
pub fn tracking_errors(spline: &PathSpline, model: &RobotModel, kin: &Kinematics, s_ref: f64) -> Result<TrackingErrors> {
    let n = model.dof();
    let p_ref = spline.sample_position(s_ref).position;
    let r_ref = spline.sample_orientation(s_ref).rotation;
    let e = p_ref - kin.ee.position;
    let e_o = orientation_error(&r_ref, &kin.ee.orientation)?;
    let jac = kin.point_jacobian(model.ee_link, &kin.ee.position);
    let de = -jac.rows(0, 3).into_owned();
    let left = right_jacobian_inv(&e_o)? * kin.ee_rotation().transpose();
    let de_o: DMatrix<f64> = DMatrix::from_iterator(3, n, (left * jac.rows(3, 3)).iter().copied());
    debug_assert_eq!(de_o.ncols(), n);
    Ok(TrackingErrors { e, e_o, de, de_o })
}
