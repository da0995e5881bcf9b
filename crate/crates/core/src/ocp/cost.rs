//! Least-squares stage costs and their Gauss-Newton quadratics.
//!
//! Each stage cost is `‖r‖²` over the weighted residuals
//!
//! ```text
//! √w_c e_c, √w_l e_l, √w_vs (v_desired − v_s), √w_o e_o,      (all stages)
//! √w_qd q̇, √w_dqd Δq̇, √w_vds v̇_s                               (stages with an input)
//! ```
//!
//! with `Δq̇_1 = 0` and `Δq̇_k = q̇_k − q̇_{k−1}` otherwise.

use nalgebra::{DMatrix, DVector};

use super::errors::{error_jacobians_at, path_errors_at, PathErrors};
use super::{OcpInput, OcpState, Weights};
use crate::kinematics::{Kinematics, RobotModel};
use crate::pathspline::PathSpline;
use crate::Result;

/// Rows of the state-dependent part of the residual.
pub(crate) const STATE_RESIDUALS: usize = 10;

/// Weighted residual of one stage and its Jacobians.
#[derive(Debug, Clone)]
pub struct StageResidual {
    pub r: DVector<f64>,
    /// ∂r/∂x, rows × (n+2).
    pub jx: DMatrix<f64>,
    /// ∂r/∂u_k, rows × (n+1); empty columns on the terminal stage.
    pub ju: DMatrix<f64>,
    /// ∂r/∂u_{k−1}.
    pub ju_prev: DMatrix<f64>,
    pub errors: PathErrors,
}

/// Value, gradient and Gauss-Newton Hessian over `(x, u)` of one stage cost.
#[derive(Debug, Clone)]
pub struct StageQuadratic {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// State-dependent residual rows `[√w_c e_c, √w_l e_l, √w_vs (v_d − v_s), √w_o e_o]`.
pub(crate) fn state_residual(
    spline: &PathSpline,
    model: &RobotModel,
    kin: &Kinematics,
    x: &OcpState,
    w: &Weights,
) -> Result<(DVector<f64>, DMatrix<f64>, PathErrors)> {
    let n = model.dof();
    let errors = path_errors_at(spline, kin, x.s)?;
    let jac = error_jacobians_at(spline, model, kin, x.s, &errors)?;
    let (sc, sl, sv, so) = (w.w_c.sqrt(), w.w_l.sqrt(), w.w_vs.sqrt(), w.w_o.sqrt());
    let mut r = DVector::zeros(STATE_RESIDUALS);
    let mut jx = DMatrix::zeros(STATE_RESIDUALS, n + 2);
    r.rows_mut(0, 3).copy_from(&(errors.e_c * sc));
    jx.rows_mut(0, 3).copy_from(&(&jac.de_c * sc));
    r.rows_mut(3, 3).copy_from(&(errors.e_l * sl));
    jx.rows_mut(3, 3).copy_from(&(&jac.de_l * sl));
    r[6] = sv * (w.v_desired - x.v_s);
    jx[(6, n + 1)] = -sv;
    r.rows_mut(7, 3).copy_from(&(errors.e_o * so));
    jx.rows_mut(7, 3).copy_from(&(&jac.de_o * so));
    Ok((r, jx, errors))
}

/// Residuals of one stage. `u = None` gives the terminal stage; `u_prev = None` marks the
/// first stage, where the input-rate term vanishes.
pub fn stage_residuals(
    spline: &PathSpline,
    model: &RobotModel,
    x: &OcpState,
    u: Option<&OcpInput>,
    u_prev: Option<&OcpInput>,
    w: &Weights,
) -> Result<StageResidual> {
    let n = model.dof();
    let kin = model.forward_kinematics(&x.q);
    let (rs, jxs, errors) = state_residual(spline, model, &kin, x, w)?;
    let Some(u) = u else {
        return Ok(StageResidual {
            r: rs,
            jx: jxs,
            ju: DMatrix::zeros(STATE_RESIDUALS, n + 1),
            ju_prev: DMatrix::zeros(STATE_RESIDUALS, n + 1),
            errors,
        });
    };
    let rows = STATE_RESIDUALS + 2 * n + 1;
    let mut r = DVector::zeros(rows);
    let mut jx = DMatrix::zeros(rows, n + 2);
    let mut ju = DMatrix::zeros(rows, n + 1);
    let mut ju_prev = DMatrix::zeros(rows, n + 1);
    r.rows_mut(0, STATE_RESIDUALS).copy_from(&rs);
    jx.rows_mut(0, STATE_RESIDUALS).copy_from(&jxs);
    let (sq, sd, sa) = (w.w_qd.sqrt(), w.w_dqd.sqrt(), w.w_vds.sqrt());
    let base = STATE_RESIDUALS;
    for i in 0..n {
        r[base + i] = sq * u.qd[i];
        ju[(base + i, i)] = sq;
        if let Some(prev) = u_prev {
            r[base + n + i] = sd * (u.qd[i] - prev.qd[i]);
            ju[(base + n + i, i)] = sd;
            ju_prev[(base + n + i, i)] = -sd;
        }
    }
    r[base + 2 * n] = sa * u.vd_s;
    ju[(base + 2 * n, n)] = sa;
    Ok(StageResidual { r, jx, ju, ju_prev, errors })
}

/// Cost value, gradient and Gauss-Newton Hessian with respect to `(x, u)`, holding `u_prev`
/// fixed. Terminal stages (`u = None`) return quantities over `x` only.
pub fn stage_cost_quadratics(
    spline: &PathSpline,
    model: &RobotModel,
    x: &OcpState,
    u: Option<&OcpInput>,
    u_prev: Option<&OcpInput>,
    w: &Weights,
) -> Result<StageQuadratic> {
    let res = stage_residuals(spline, model, x, u, u_prev, w)?;
    let jac = if u.is_some() {
        let mut j = DMatrix::zeros(res.r.len(), res.jx.ncols() + res.ju.ncols());
        j.columns_mut(0, res.jx.ncols()).copy_from(&res.jx);
        j.columns_mut(res.jx.ncols(), res.ju.ncols()).copy_from(&res.ju);
        j
    } else {
        res.jx.clone()
    };
    Ok(StageQuadratic {
        value: res.r.norm_squared(),
        gradient: jac.transpose() * &res.r * 2.0,
        hessian: jac.transpose() * &jac * 2.0,
    })
}
