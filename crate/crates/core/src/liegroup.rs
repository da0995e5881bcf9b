//! SO(3) exponential and logarithmic maps, skew operators and the inverse right Jacobian.
//!
//! Rotation vectors use the canonical representative with `‖φ‖ ≤ π`. Closed forms switch to
//! Taylor series below `1e-8` rad (exp/log) and `1e-4` rad (inverse right Jacobian).

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// Tangent-space coordinates of a rotation (axis times angle, radians).
pub type RotVec = Vector3<f64>;

const EXP_LOG_SERIES_THRESHOLD: f64 = 1e-8;
const JR_INV_SERIES_THRESHOLD: f64 = 1e-4;
const SKEW_TOLERANCE: f64 = 1e-10;

/// A rotation matrix. Construction through [`RotationSO3::from_matrix`] validates
/// orthonormality and a unit determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSO3(Matrix3<f64>);

impl RotationSO3 {
    pub fn identity() -> Self {
        RotationSO3(Matrix3::identity())
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let orth = (m.transpose() * m - Matrix3::identity()).amax();
        let det = m.determinant();
        if !orth.is_finite() || orth > 1e-10 || (det - 1.0).abs() > 1e-10 {
            return Err(Error::Contract(format!(
                "matrix is not a rotation (orthogonality error {orth:.2e}, det {det})"
            )));
        }
        Ok(RotationSO3(m))
    }

    /// Wraps a matrix that is a rotation by construction (products of rotations, Rodrigues).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationSO3(m)
    }

    /// Rotation from a unit quaternion given as `(w, x, y, z)`; the quaternion is normalised.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if !(q.norm() > 1e-12) {
            return Err(Error::Argument("zero-norm quaternion".into()));
        }
        let uq = nalgebra::UnitQuaternion::from_quaternion(q);
        Ok(RotationSO3(*uq.to_rotation_matrix().matrix()))
    }

    /// `(w, x, y, z)` of the rotation, with `w ≥ 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationSO3(self.0.transpose())
    }

    pub fn exp(phi: &RotVec) -> Self {
        exp_map(phi)
    }

    pub fn log(&self) -> Result<RotVec> {
        log_map(self)
    }
}

impl Mul for RotationSO3 {
    type Output = RotationSO3;

    fn mul(self, rhs: RotationSO3) -> RotationSO3 {
        RotationSO3(self.0 * rhs.0)
    }
}

impl Mul<&Vector3<f64>> for &RotationSO3 {
    type Output = Vector3<f64>;

    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// Skew-symmetric matrix `v^` such that `v^ w = v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Fails when `m` is not skew-symmetric within `1e-10`.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let asym = (m + m.transpose()).amax();
    if !(asym <= SKEW_TOLERANCE) {
        return Err(Error::Contract(format!(
            "vee expects a skew-symmetric matrix (symmetric part {asym:.2e})"
        )));
    }
    Ok(vee_unchecked(m))
}

fn vee_unchecked(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues' formula.
pub fn exp_map(phi: &RotVec) -> RotationSO3 {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    let m = if theta < EXP_LOG_SERIES_THRESHOLD {
        Matrix3::identity() + k + 0.5 * k2
    } else {
        let (s, c) = theta.sin_cos();
        Matrix3::identity() + (s / theta) * k + ((1.0 - c) / (theta * theta)) * k2
    };
    RotationSO3(m)
}

/// Rotation vector of `r` with angle in `[0, π)`. Angles at π are outside the domain.
pub fn log_map(r: &RotationSO3) -> Result<RotVec> {
    let m = r.matrix();
    let tr = m.trace();
    if !tr.is_finite() || tr <= -1.0 + 1e-9 {
        return Err(Error::Domain(format!(
            "log_map undefined at rotation angle π (trace {tr})"
        )));
    }
    let axis_sin = 0.5 * vee_unchecked(&(m - m.transpose()));
    let cos_theta = ((tr - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin_theta = axis_sin.norm();
    let theta = sin_theta.atan2(cos_theta);

    if theta < EXP_LOG_SERIES_THRESHOLD {
        return Ok(axis_sin);
    }
    if cos_theta > -0.99 {
        return Ok(axis_sin * (theta / sin_theta));
    }

    // Near π the antisymmetric part loses precision; recover the axis from the symmetric part.
    let sym = 0.5 * (m + m.transpose()) - cos_theta * Matrix3::identity();
    let outer = sym / (1.0 - cos_theta);
    let (mut best, mut best_val) = (0, outer[(0, 0)]);
    for i in 1..3 {
        if outer[(i, i)] > best_val {
            best = i;
            best_val = outer[(i, i)];
        }
    }
    let mut axis = outer.column(best) / best_val.max(f64::MIN_POSITIVE).sqrt();
    axis /= axis.norm();
    if axis.dot(&axis_sin) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Inverse right Jacobian `J_r⁻¹(φ)` of SO(3), so that
/// `Log(Exp(φ) Exp(δ)) ≈ φ + J_r⁻¹(φ) δ` for small `δ`.
pub fn right_jacobian_inv(phi: &RotVec) -> Result<Matrix3<f64>> {
    let theta = phi.norm();
    if !theta.is_finite() || theta >= std::f64::consts::PI - 1e-6 {
        return Err(Error::Domain(format!(
            "inverse right Jacobian is singular at angle {theta}"
        )));
    }
    let k = hat(phi);
    let k2 = k * k;
    let coeff = if theta < JR_INV_SERIES_THRESHOLD {
        1.0 / 12.0
    } else {
        let (s, c) = theta.sin_cos();
        1.0 / (theta * theta) - (1.0 + c) / (2.0 * theta * s)
    };
    Ok(Matrix3::identity() + 0.5 * k + coeff * k2)
}

/// Rotation by `angle` about a unit axis.
pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> RotationSO3 {
    exp_map(&(axis.normalize() * angle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn hat_of_zero_is_zero() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn hat_written_out() {
        let expected = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        let m = hat(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(m, expected);
        assert_eq!(m.transpose(), -m);
    }

    #[test]
    fn vee_inverts_hat_exactly() {
        let v = Vector3::new(0.1, -0.2, 0.3);
        assert_eq!(vee(&hat(&v)).unwrap(), v);
    }

    #[test]
    fn vee_rejects_symmetric_input() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(vee(&m), Err(Error::Contract(_))));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(*exp_map(&Vector3::zeros()).matrix(), Matrix3::identity());
    }

    #[test]
    fn exp_quarter_turn_about_x() {
        let r = exp_map(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((r.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn exp_of_negated_vector_is_inverse() {
        let phi = Vector3::new(0.4, -1.1, 0.7);
        let prod = *exp_map(&phi).matrix() * exp_map(&-phi).matrix();
        assert!((prod - Matrix3::identity()).amax() < 1e-15);
    }

    #[test]
    fn exp_is_a_valid_rotation() {
        let r = exp_map(&Vector3::new(2.0, 0.3, -1.0));
        assert!(RotationSO3::from_matrix(*r.matrix()).is_ok());
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(log_map(&RotationSO3::identity()).unwrap(), Vector3::zeros());
    }

    #[test]
    fn log_roundtrip_small_example() {
        let phi = Vector3::new(0.3, -0.1, 0.2);
        let back = log_map(&exp_map(&phi)).unwrap();
        assert!((back - phi).amax() < 1e-14);
    }

    #[test]
    fn log_of_z_rotation() {
        let (s, c) = 0.5f64.sin_cos();
        let r = RotationSO3::from_matrix(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
            .unwrap();
        let phi = log_map(&r).unwrap();
        assert!((phi - Vector3::new(0.0, 0.0, 0.5)).amax() < 1e-15);
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = exp_map(&Vector3::new(0.0, PI, 0.0));
        assert!(matches!(log_map(&r), Err(Error::Domain(_))));
    }

    #[test]
    fn log_near_half_turn_is_accurate() {
        let phi = Vector3::new(1.0, -2.0, 0.5).normalize() * (PI - 1e-3);
        let back = log_map(&exp_map(&phi)).unwrap();
        assert!((back - phi).amax() < 1e-9, "{back} vs {phi}");
    }

    #[test]
    fn small_angle_branches_are_continuous() {
        let dir = Vector3::new(0.3, -0.5, 0.8).normalize();
        for &theta in &[0.99e-8, 1.01e-8] {
            let phi = dir * theta;
            assert!((log_map(&exp_map(&phi)).unwrap() - phi).amax() < 1e-20);
        }
        let below = right_jacobian_inv(&(dir * 0.999e-4)).unwrap();
        let above = right_jacobian_inv(&(dir * 1.001e-4)).unwrap();
        assert!((below - above).amax() < 1e-7);
    }

    #[test]
    fn jr_inv_at_zero_is_identity() {
        assert_eq!(right_jacobian_inv(&Vector3::zeros()).unwrap(), Matrix3::identity());
    }

    #[test]
    fn jr_inv_about_x_axis() {
        // For φ = [θ,0,0], (φ^)² = -θ² diag(0,1,1), so the yy/zz entries are
        // 1 - θ²·c(θ) and the skew part is ½φ^.
        let theta: f64 = 0.3;
        let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
        let diag = 1.0 - theta * theta * coeff;
        let expected = Matrix3::new(1.0, 0.0, 0.0, 0.0, diag, -0.15, 0.0, 0.15, diag);
        let m = right_jacobian_inv(&Vector3::new(theta, 0.0, 0.0)).unwrap();
        assert!((m - expected).amax() < 1e-15);
    }

    #[test]
    fn jr_inv_rejects_near_pi() {
        let phi = Vector3::new(0.0, 0.0, PI - 1e-7);
        assert!(matches!(right_jacobian_inv(&phi), Err(Error::Domain(_))));
    }

    #[test]
    fn jr_inv_first_order_error_is_quadratic() {
        let phi = Vector3::new(0.7, -0.4, 1.2);
        let dir = Vector3::new(0.2, 0.9, -0.4).normalize();
        let jr_inv = right_jacobian_inv(&phi).unwrap();
        let err = |eps: f64| {
            let delta = dir * eps;
            let exact = log_map(&(exp_map(&phi) * exp_map(&delta))).unwrap();
            (exact - (phi + jr_inv * delta)).norm()
        };
        let ratio = err(1e-3) / err(5e-4);
        assert!(ratio >= 3.5, "ratio {ratio}");
    }

    #[test]
    fn quaternion_roundtrip() {
        let r = exp_map(&Vector3::new(0.2, -0.7, 0.4));
        let [w, x, y, z] = r.to_quaternion();
        let back = RotationSO3::from_quaternion(w, x, y, z).unwrap();
        assert!((back.matrix() - r.matrix()).amax() < 1e-14);
    }
}
