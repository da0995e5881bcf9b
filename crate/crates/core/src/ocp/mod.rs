//! The receding-horizon contouring problem.
//!
//! State `x = [q, s, v_s]`, input `u = [q̇, v̇_s]`. A horizon holds states `x_1 … x_N` and
//! inputs `u_1 … u_{N−1}`; `x_1` is the measured state.

mod config;
mod constraints;
mod cost;
mod errors;
mod sqp;

use nalgebra::DVector;

pub use config::{load_ocp_config, parse_ocp_config, Bounds, BarrierSettings, OcpConfig, Weights};
pub use constraints::{build_stage_constraints, StageBarriers};
pub use cost::{stage_cost_quadratics, stage_residuals, StageQuadratic};
pub use errors::{error_jacobians, path_errors, tracking_errors, ErrorJacobians, PathErrors, TrackingErrors};
pub use sqp::{
    reference_parameter, sqp_solve, Controller, ControllerKind, CondensedQp, OcpProblem, SolveResult, SolveStats,
    SolveStatus, SolveTimings,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OcpState {
    pub q: DVector<f64>,
    pub s: f64,
    pub v_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpInput {
    pub qd: DVector<f64>,
    pub vd_s: f64,
}

impl OcpState {
    pub fn new(q: DVector<f64>, s: f64, v_s: f64) -> Self {
        OcpState { q, s, v_s }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// `[q, s, v_s]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut v = DVector::zeros(n + 2);
        v.rows_mut(0, n).copy_from(&self.q);
        v[n] = self.s;
        v[n + 1] = self.v_s;
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() - 2;
        OcpState {
            q: v.rows(0, n).into_owned(),
            s: v[n],
            v_s: v[n + 1],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite()) && self.s.is_finite() && self.v_s.is_finite()
    }
}

impl OcpInput {
    pub fn zeros(n: usize) -> Self {
        OcpInput {
            qd: DVector::zeros(n),
            vd_s: 0.0,
        }
    }

    /// `[q̇, v̇_s]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.qd.len();
        let mut v = DVector::zeros(n + 1);
        v.rows_mut(0, n).copy_from(&self.qd);
        v[n] = self.vd_s;
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = v.len() - 1;
        OcpInput {
            qd: v.rows(0, n).into_owned(),
            vd_s: v[n],
        }
    }
}

/// Exact zero-order-hold step of `q̇ = u_q`, `ṡ = v_s`, `v̇_s = u_s`.
pub fn discrete_dynamics(x: &OcpState, u: &OcpInput, dt: f64) -> OcpState {
    OcpState {
        q: &x.q + &u.qd * dt,
        s: x.s + x.v_s * dt + 0.5 * u.vd_s * dt * dt,
        v_s: x.v_s + u.vd_s * dt,
    }
}
