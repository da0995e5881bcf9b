//! Relaxed logarithmic barrier and the linearised control-barrier rows handed to the QP.
//!
//! Every barrier uses a margin `h ≥ 0` as its safe set:
//!
//! | kind            | h                          |
//! |-----------------|----------------------------|
//! | singularity     | μ(q) − ε_sing              |
//! | self collision  | d_self(q) − ε_self         |
//! | env collision l | d_env,l(q) − r_obs − ε_env |
//!
//! and the rate constraint `RBF(h(q)) ≤ ∇h(q)ᵀ q̇`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.01;
pub const EPS_SINGULARITY: f64 = 0.018;
pub const EPS_SELF: f64 = 0.01;
pub const EPS_ENV: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    Singularity,
    SelfCollision,
    EnvCollision { link: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub kind: BarrierKind,
    pub epsilon: f64,
    pub delta: f64,
}

impl BarrierSpec {
    pub fn new(kind: BarrierKind, epsilon: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Argument(format!("barrier delta must be > 0, got {delta}")));
        }
        if !epsilon.is_finite() {
            return Err(Error::Argument("barrier epsilon must be finite".into()));
        }
        Ok(BarrierSpec { kind, epsilon, delta })
    }

    /// `h = raw − ε`, where `raw` is μ, d_self, or d_env,l − r_obs.
    pub fn margin(&self, raw: f64) -> f64 {
        raw - self.epsilon
    }
}

/// Value, first and second derivative of the relaxed barrier at `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfValue {
    pub value: f64,
    pub d_dh: f64,
    pub d2_dh2: f64,
}

/// `−ln(1 + h)` for `h ≥ δ`, otherwise its second-order Taylor expansion about `δ`.
///
/// Strictly decreasing on the whole real line, C² at `δ`.
pub fn rbf(h: f64, delta: f64) -> RbfValue {
    if h >= delta {
        let a = 1.0 + h;
        RbfValue {
            value: -a.ln(),
            d_dh: -1.0 / a,
            d2_dh2: 1.0 / (a * a),
        }
    } else {
        let a = 1.0 + delta;
        let f0 = -a.ln();
        let f1 = -1.0 / a;
        let f2 = 1.0 / (a * a);
        let dh = h - delta;
        RbfValue {
            value: f0 + f1 * dh + 0.5 * f2 * dh * dh,
            d_dh: f1 + f2 * dh,
            d2_dh2: f2,
        }
    }
}

/// Linear inequality `coeff_uᵀ u + coeff_xᵀ (x − x̄) ≤ rhs` for one horizon stage, with
/// `u = [q̇, v̇_s]` and `x = [q, s, v_s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub kind: BarrierKind,
    pub stage: usize,
    pub coeff_u: DVector<f64>,
    pub coeff_x: DVector<f64>,
    pub rhs: f64,
    /// Margin `h(x̄)` at the linearisation point.
    pub h: f64,
}

impl ConstraintRow {
    /// `rhs − coeff_uᵀu − coeff_xᵀ(x − x̄)`; non-negative when satisfied.
    pub fn slack(&self, u: &DVector<f64>, dx: &DVector<f64>) -> f64 {
        self.rhs - self.coeff_u.dot(u) - self.coeff_x.dot(dx)
    }
}

/// Linearisation of `RBF(h(q)) − ∇h(q)ᵀq̇ ≤ 0` about the state where `h` and `grad_q` were
/// evaluated. The curvature of `h` is dropped from the state gradient.
pub fn cbf_row(kind: BarrierKind, h: f64, grad_q: &DVector<f64>, delta: f64, stage: usize) -> ConstraintRow {
    let n = grad_q.len();
    let r = rbf(h, delta);
    let mut coeff_u = DVector::zeros(n + 1);
    coeff_u.rows_mut(0, n).copy_from(&(-grad_q));
    let mut coeff_x = DVector::zeros(n + 2);
    coeff_x.rows_mut(0, n).copy_from(&(grad_q * r.d_dh));
    ConstraintRow {
        kind,
        stage,
        coeff_u,
        coeff_x,
        rhs: -r.value,
        h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_branch_value() {
        let r = rbf(1.0, 0.01);
        assert!((r.value + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((r.d_dh + 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_branch_at_zero() {
        // β(0) = −ln(1.01) + δ/(1.01) + ½ δ²/1.01²
        let d: f64 = 0.01;
        let expect = -(1.0 + d).ln() + d / (1.0 + d) + 0.5 * d * d / ((1.0 + d) * (1.0 + d));
        assert!((rbf(0.0, d).value - expect).abs() < 1e-17);
        assert!(rbf(0.0, d).value < 0.0 && rbf(0.0, d).value > -1e-6);
    }

    #[test]
    fn c2_junction() {
        for &d in &[1e-3, 0.01, 0.3] {
            let above = rbf(d, d);
            let below = rbf(d * (1.0 - 1e-14), d);
            assert!((above.value - below.value).abs() < 1e-12);
            assert!((above.d_dh - below.d_dh).abs() < 1e-10);
            assert!((above.d2_dh2 - below.d2_dh2).abs() < 1e-10);
        }
    }

    #[test]
    fn strictly_decreasing_everywhere() {
        let mut h = -5.0;
        while h < 5.0 {
            assert!(rbf(h, DEFAULT_DELTA).d_dh < 0.0, "h = {h}");
            h += 1e-3;
        }
        assert!(rbf(-1e6, DEFAULT_DELTA).d_dh < 0.0);
    }

    #[test]
    fn derivative_matches_fd() {
        for &h in &[-2.0, -0.5, 0.0, 0.005, 0.02, 0.7, 3.0] {
            let e = 1e-6;
            let fd = (rbf(h + e, 0.01).value - rbf(h - e, 0.01).value) / (2.0 * e);
            assert!((fd - rbf(h, 0.01).d_dh).abs() < 1e-8);
        }
    }

    #[test]
    fn vacuous_row_far_from_boundary() {
        let row = cbf_row(BarrierKind::Singularity, 10.0, &DVector::zeros(3), 0.01, 0);
        assert!(row.rhs > 0.0);
        assert!(row.coeff_u.iter().all(|&c| c == 0.0));
        let u = DVector::from_vec(vec![5.0, -5.0, 5.0, 1.0]);
        assert!(row.slack(&u, &DVector::zeros(5)) > 0.0);
    }

    #[test]
    fn boundary_row_uses_quadratic_branch() {
        let grad = DVector::from_vec(vec![1.0, 0.0]);
        let row = cbf_row(BarrierKind::SelfCollision, 0.0, &grad, 0.01, 2);
        assert_eq!(row.rhs, -rbf(0.0, 0.01).value);
        assert_eq!(row.coeff_u.as_slice(), &[-1.0, 0.0, 0.0]);
        assert_eq!(row.stage, 2);
    }

    #[test]
    fn singularity_row_in_log_branch() {
        // μ = ε + 0.5 → ∇μᵀq̇ ≥ −ln 1.5.
        let grad = DVector::from_vec(vec![0.0, 2.0]);
        let row = cbf_row(BarrierKind::Singularity, 0.5, &grad, 0.01, 0);
        assert!((row.rhs - 1.5f64.ln()).abs() < 1e-15);
        let limit = -1.5f64.ln() / 2.0;
        let ok = DVector::from_vec(vec![0.0, limit + 1e-9, 0.0]);
        let bad = DVector::from_vec(vec![0.0, limit - 1e-6, 0.0]);
        assert!(row.slack(&ok, &DVector::zeros(4)) >= 0.0);
        assert!(row.slack(&bad, &DVector::zeros(4)) < 0.0);
    }

    #[test]
    fn doubling_gradient_halves_minimal_rate() {
        let g = DVector::from_vec(vec![0.6, 0.8]);
        let min_rate = |scale: f64| {
            let row = cbf_row(BarrierKind::Singularity, 0.2, &(&g * scale), 0.01, 0);
            // Along ĝ: −scale·t ≤ rhs  ⇒  t ≥ −rhs/scale.
            -row.rhs / scale
        };
        assert!((min_rate(2.0) - 0.5 * min_rate(1.0)).abs() < 1e-15);
    }

    #[test]
    fn state_coefficient_is_chain_rule() {
        let g = DVector::from_vec(vec![0.3, -0.4]);
        let row = cbf_row(BarrierKind::EnvCollision { link: 3 }, 0.4, &g, 0.01, 1);
        let e = 1e-6;
        let fd = (rbf(0.4 + e, 0.01).value - rbf(0.4 - e, 0.01).value) / (2.0 * e);
        for i in 0..2 {
            assert!((row.coeff_x[i] - fd * g[i]).abs() < 1e-9);
        }
        assert_eq!(row.coeff_x[2], 0.0);
        assert_eq!(row.coeff_x[3], 0.0);
        assert_eq!(row.coeff_u[2], 0.0);
    }

    #[test]
    fn scalar_system_stays_in_safe_set() {
        // ẋ = u, h = x, nominal u = −1. The CBF-QP min (u − u_nom)² s.t. RBF(x) ≤ u has the
        // closed-form solution max(u_nom, RBF(x)).
        let dt = 1e-3;
        let mut x: f64 = 0.5;
        let mut lowest = x;
        for _ in 0..10_000 {
            let u = (-1.0f64).max(rbf(x, DEFAULT_DELTA).value);
            x += dt * u;
            lowest = lowest.min(x);
        }
        assert!(lowest > -1e-6, "lowest = {lowest}");
    }
}
