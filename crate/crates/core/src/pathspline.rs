//! Path reference parameterised by a normalised progress variable `s ∈ [0, 1]`.
//!
//! Positions use a natural cubic spline through the via-point positions. Orientations
//! interpolate each segment on the manifold, `R_i · Exp(α(s) Φ_i)` with
//! `Φ_i = Log(R_iᵀ R_{i+1})` and `α(t) = 3t² − 2t³` on the normalised segment time `t`.

use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, Vector3};

use crate::liegroup::{exp_map, log_map, RotVec, RotationSO3};
use crate::{Error, Result};

/// Largest admissible relative rotation between consecutive via-points.
const MAX_SEGMENT_ANGLE: f64 = std::f64::consts::PI - 1e-3;
const MIN_TANGENT_NORM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ViaPoint {
    pub position: Vector3<f64>,
    pub orientation: RotationSO3,
    pub s: f64,
}

impl ViaPoint {
    /// Assigns equally spaced path parameters from 0 to 1 to a list of poses.
    pub fn equally_spaced(poses: &[(Vector3<f64>, RotationSO3)]) -> Vec<ViaPoint> {
        let last = poses.len().saturating_sub(1).max(1) as f64;
        poses
            .iter()
            .enumerate()
            .map(|(i, (p, r))| ViaPoint {
                position: *p,
                orientation: *r,
                s: if i + 1 == poses.len() { 1.0 } else { i as f64 / last },
            })
            .collect()
    }
}

/// Cubic `a + b τ + c τ² + d τ³` in the local coordinate `τ = s − s_i`.
#[derive(Debug, Clone, Copy)]
struct CubicSegment {
    a: Vector3<f64>,
    b: Vector3<f64>,
    c: Vector3<f64>,
    d: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
struct OrientationSegment {
    start: RotationSO3,
    /// `Log(R_iᵀ R_{i+1})`.
    delta: RotVec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionSample {
    pub position: Vector3<f64>,
    pub dp_ds: Vector3<f64>,
    pub d2p_ds2: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentSample {
    pub tangent: Vector3<f64>,
    pub dtangent_ds: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationSample {
    pub rotation: RotationSO3,
    /// `dφ_i/ds = α′_i(s) Φ_i`, expressed in the frame of `R_ref,i` (equivalently of `R_r(s)`,
    /// since `Φ_i` is invariant under `Exp(α Φ_i)`).
    pub phi_prime: RotVec,
}

#[derive(Debug, Clone)]
pub struct PathSpline {
    knots: Vec<f64>,
    knot_positions: Vec<Vector3<f64>>,
    position_segments: Vec<CubicSegment>,
    orientation_segments: Vec<OrientationSegment>,
    end_orientation: RotationSO3,
}

impl PathSpline {
    /// Builds the spline through `via_points`, whose `s` values must start at 0, end at 1 and
    /// increase strictly.
    pub fn build(via_points: &[ViaPoint]) -> Result<Self> {
        let count = via_points.len();
        if count < 2 {
            return Err(Error::Argument(format!(
                "a path needs at least 2 via-points, got {count}"
            )));
        }
        let knots: Vec<f64> = via_points.iter().map(|v| v.s).collect();
        if knots[0] != 0.0 || knots[count - 1] != 1.0 {
            return Err(Error::Argument(
                "via-point parameters must start at 0 and end at 1".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Argument(
                "via-point parameters must be strictly increasing".into(),
            ));
        }
        if via_points
            .iter()
            .any(|v| !v.position.iter().all(|x| x.is_finite()))
        {
            return Err(Error::Argument("via-point position is not finite".into()));
        }

        let positions: Vec<Vector3<f64>> = via_points.iter().map(|v| v.position).collect();
        let position_segments = natural_cubic(&knots, &positions);

        let mut orientation_segments = Vec::with_capacity(count - 1);
        for (i, pair) in via_points.windows(2).enumerate() {
            let rel = pair[0].orientation.transpose() * pair[1].orientation;
            let delta = log_map(&rel).map_err(|_| {
                Error::Argument(format!("via-points {i} and {} are a half turn apart", i + 1))
            })?;
            if delta.norm() >= MAX_SEGMENT_ANGLE {
                return Err(Error::Argument(format!(
                    "relative rotation between via-points {i} and {} is too close to π",
                    i + 1
                )));
            }
            orientation_segments.push(OrientationSegment {
                start: pair[0].orientation,
                delta,
            });
        }

        let spline = PathSpline {
            knots,
            knot_positions: via_points.iter().map(|v| v.position).collect(),
            position_segments,
            orientation_segments,
            end_orientation: via_points[count - 1].orientation,
        };
        spline.check_regular()?;
        Ok(spline)
    }

    /// Equally spaced via-points from a list of poses.
    pub fn from_poses(poses: &[(Vector3<f64>, RotationSO3)]) -> Result<Self> {
        Self::build(&ViaPoint::equally_spaced(poses))
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn segment_count(&self) -> usize {
        self.position_segments.len()
    }

    /// Clamps `s` into `[0, 1]` and returns `(segment index, τ = s − s_i, clamped s)`.
    /// Interior knots belong to the segment on their left.
    fn locate(&self, s: f64) -> (usize, f64, f64) {
        let s = if (0.0..=1.0).contains(&s) {
            s
        } else {
            if s.is_nan() {
                warn!("path parameter is NaN; using s = 0");
            } else {
                warn!("path parameter {s} outside [0, 1]; clamping");
            }
            if s > 1.0 {
                1.0
            } else {
                0.0
            }
        };
        let seg = self.knots[1..]
            .partition_point(|&k| k < s)
            .min(self.segment_count() - 1);
        (seg, s - self.knots[seg], s)
    }

    pub fn sample_position(&self, s: f64) -> PositionSample {
        let (seg, tau, s) = self.locate(s);
        let c = &self.position_segments[seg];
        // Knots reproduce the via positions exactly rather than through the polynomial.
        let position = if s == self.knots[seg + 1] {
            self.knot_positions[seg + 1]
        } else {
            c.a + tau * (c.b + tau * (c.c + tau * c.d))
        };
        PositionSample {
            position,
            dp_ds: c.b + tau * (2.0 * c.c + 3.0 * tau * c.d),
            d2p_ds2: 2.0 * c.c + 6.0 * tau * c.d,
        }
    }

    /// Unit tangent `t̂ = p′/‖p′‖` and its derivative `(I − t̂t̂ᵀ) p″ / ‖p′‖`.
    pub fn unit_tangent(&self, s: f64) -> Result<TangentSample> {
        let sample = self.sample_position(s);
        tangent_from(&sample)
    }

    pub fn sample_orientation(&self, s: f64) -> OrientationSample {
        let (seg, tau, s) = self.locate(s);
        let o = &self.orientation_segments[seg];
        let h = self.knots[seg + 1] - self.knots[seg];
        let t = tau / h;
        let alpha = t * t * (3.0 - 2.0 * t);
        let alpha_prime = 6.0 * t * (1.0 - t) / h;
        // Knots reproduce the via orientations exactly rather than through Exp(Φ).
        let rotation = if s == self.knots[seg + 1] {
            match self.orientation_segments.get(seg + 1) {
                Some(next) => next.start,
                None => self.end_orientation,
            }
        } else {
            o.start * exp_map(&(o.delta * alpha))
        };
        OrientationSample {
            rotation,
            phi_prime: o.delta * alpha_prime,
        }
    }

    fn check_regular(&self) -> Result<()> {
        const SAMPLES: usize = 256;
        for (i, c) in self.position_segments.iter().enumerate() {
            let h = self.knots[i + 1] - self.knots[i];
            let speed = |tau: f64| (c.b + tau * (2.0 * c.c + 3.0 * tau * c.d)).norm();
            let (mut best_tau, mut best) = (0.0, speed(0.0));
            for k in 1..=SAMPLES {
                let tau = h * k as f64 / SAMPLES as f64;
                let v = speed(tau);
                if v < best {
                    best = v;
                    best_tau = tau;
                }
            }
            // Golden-section refinement around the best sample.
            let step = h / SAMPLES as f64;
            let (mut lo, mut hi) = ((best_tau - step).max(0.0), (best_tau + step).min(h));
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..60 {
                let m1 = hi - g * (hi - lo);
                let m2 = lo + g * (hi - lo);
                if speed(m1) < speed(m2) {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            best = best.min(speed(0.5 * (lo + hi)));
            if !(best > MIN_TANGENT_NORM) {
                return Err(Error::Argument(format!(
                    "path is stationary (|dp/ds| = {best:.2e}) in segment {i}"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn tangent_from(sample: &PositionSample) -> Result<TangentSample> {
    let speed = sample.dp_ds.norm();
    if !(speed > MIN_TANGENT_NORM) {
        return Err(Error::Domain(format!(
            "path tangent is degenerate (|dp/ds| = {speed:.2e})"
        )));
    }
    let tangent = sample.dp_ds / speed;
    let projector = Matrix3::identity() - tangent * tangent.transpose();
    Ok(TangentSample {
        tangent,
        dtangent_ds: projector * sample.d2p_ds2 / speed,
    })
}

/// Natural cubic spline (zero second derivative at both ends) through `(knots, values)`.
fn natural_cubic(knots: &[f64], values: &[Vector3<f64>]) -> Vec<CubicSegment> {
    let n = knots.len();
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let mut second = vec![Vector3::zeros(); n];
    if n > 2 {
        // Thomas algorithm on the interior second derivatives.
        let m = n - 2;
        let mut diag = vec![0.0; m];
        let mut rhs = vec![Vector3::zeros(); m];
        for i in 0..m {
            let (h0, h1) = (h[i], h[i + 1]);
            diag[i] = 2.0 * (h0 + h1);
            rhs[i] = 6.0
                * ((values[i + 2] - values[i + 1]) / h1 - (values[i + 1] - values[i]) / h0);
        }
        for i in 1..m {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * h[i];
            let prev = rhs[i - 1];
            rhs[i] -= w * prev;
        }
        second[m] = rhs[m - 1] / diag[m - 1];
        for i in (0..m - 1).rev() {
            second[i + 1] = (rhs[i] - h[i + 1] * second[i + 2]) / diag[i];
        }
    }
    (0..n - 1)
        .map(|i| {
            let hi = h[i];
            let slope = (values[i + 1] - values[i]) / hi;
            CubicSegment {
                a: values[i],
                b: slope - hi * (2.0 * second[i] + second[i + 1]) / 6.0,
                c: second[i] / 2.0,
                d: (second[i + 1] - second[i]) / (6.0 * hi),
            }
        })
        .collect()
}

/// Reads a via-point file: one pose per line as `px py pz qw qx qy qz`. Blank lines and lines
/// starting with `#` are ignored. Path parameters are assigned with equal spacing.
pub fn load_via_points(path: &Path) -> Result<Vec<ViaPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_via_points(&text).map_err(|msg| Error::parse(path, msg))
}

pub fn parse_via_points(text: &str) -> std::result::Result<Vec<ViaPoint>, String> {
    let mut poses = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        if fields.len() != 7 {
            return Err(format!(
                "line {}: expected 7 fields (px py pz qw qx qy qz), found {}",
                lineno + 1,
                fields.len()
            ));
        }
        let rotation = RotationSO3::from_quaternion(fields[3], fields[4], fields[5], fields[6])
            .map_err(|e| format!("line {}: {e}", lineno + 1))?;
        poses.push((Vector3::new(fields[0], fields[1], fields[2]), rotation));
    }
    Ok(ViaPoint::equally_spaced(&poses))
}

/// Inverse of [`parse_via_points`].
pub fn format_via_points(points: &[ViaPoint]) -> String {
    let mut out = String::from("# px py pz qw qx qy qz\n");
    for v in points {
        let [w, x, y, z] = v.orientation.to_quaternion();
        out.push_str(&format!(
            "{} {} {} {} {} {} {}\n",
            v.position.x, v.position.y, v.position.z, w, x, y, z
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liegroup::rotation_about;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn straight_line() -> PathSpline {
        PathSpline::from_poses(&[
            (Vector3::zeros(), RotationSO3::identity()),
            (Vector3::x(), RotationSO3::identity()),
        ])
        .unwrap()
    }

    fn random_spline(seed: u64, count: usize) -> PathSpline {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses: Vec<_> = (0..count)
            .map(|i| {
                let p = Vector3::new(
                    0.3 * i as f64 + rng.random_range(-0.05..0.05),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                );
                let phi = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                (p, exp_map(&phi))
            })
            .collect();
        PathSpline::from_poses(&poses).unwrap()
    }

    #[test]
    fn rejects_single_via_point() {
        let err = PathSpline::from_poses(&[(Vector3::zeros(), RotationSO3::identity())]);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn rejects_half_turn_between_via_points() {
        let err = PathSpline::from_poses(&[
            (Vector3::zeros(), RotationSO3::identity()),
            (Vector3::x(), rotation_about(&Vector3::z(), PI)),
        ]);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn rejects_coincident_via_points() {
        let err = PathSpline::from_poses(&[
            (Vector3::zeros(), RotationSO3::identity()),
            (Vector3::zeros(), RotationSO3::identity()),
        ]);
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn two_points_give_a_straight_line() {
        let spline = straight_line();
        let sample = spline.sample_position(0.25);
        assert!((sample.position - Vector3::new(0.25, 0.0, 0.0)).amax() < 1e-15);
        assert!((sample.dp_ds - Vector3::x()).amax() < 1e-15);
        assert!(sample.d2p_ds2.amax() < 1e-15);
        let t = spline.unit_tangent(0.7).unwrap();
        assert!((t.tangent - Vector3::x()).amax() < 1e-15);
        assert!(t.dtangent_ds.amax() < 1e-15);
    }

    #[test]
    fn out_of_range_parameter_is_clamped() {
        let spline = straight_line();
        assert_eq!(spline.sample_position(1.5), spline.sample_position(1.0));
        assert_eq!(spline.sample_position(-0.2), spline.sample_position(0.0));
    }

    #[test]
    fn orientation_blend_is_smoothstep() {
        // α(t) = 3t² − 2t³ satisfies α(0)=0, α(1)=1, α′(0)=α′(1)=0.
        let alpha = |t: f64| t * t * (3.0 - 2.0 * t);
        let alpha_prime = |t: f64| 6.0 * t * (1.0 - t);
        assert_eq!(alpha(0.0), 0.0);
        assert_eq!(alpha(1.0), 1.0);
        assert_eq!(alpha_prime(0.0), 0.0);
        assert_eq!(alpha_prime(1.0), 0.0);

        let spline = PathSpline::from_poses(&[
            (Vector3::zeros(), RotationSO3::identity()),
            (Vector3::x(), rotation_about(&Vector3::z(), FRAC_PI_2)),
        ])
        .unwrap();
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            let r = spline.sample_orientation(t).rotation;
            let phi = log_map(&r).unwrap();
            assert!((phi - Vector3::new(0.0, 0.0, FRAC_PI_2 * alpha(t))).amax() < 1e-14);
        }
        let mid = log_map(&spline.sample_orientation(0.5).rotation).unwrap();
        assert!((mid.z - FRAC_PI_4).abs() < 1e-14);
    }

    #[test]
    fn interpolates_every_via_pose() {
        let spline = random_spline(3, 6);
        for (i, &s) in spline.knots().iter().enumerate() {
            let pos = spline.sample_position(s).position;
            assert_eq!(pos, spline.knot_positions[i]);
            if i < spline.segment_count() {
                assert_eq!(pos, spline.position_segments[i].a);
                assert_eq!(
                    spline.sample_orientation(s).rotation,
                    spline.orientation_segments[i].start
                );
            }
        }
    }

    #[test]
    fn hits_next_via_orientation_at_segment_end() {
        let poses: Vec<_> = (0..5)
            .map(|i| {
                let phi = Vector3::new(0.3 * i as f64, -0.2, 0.1 * i as f64);
                (Vector3::new(i as f64, (i * i) as f64 * 0.1, 0.0), exp_map(&phi))
            })
            .collect();
        let spline = PathSpline::from_poses(&poses).unwrap();
        for (i, (p, r)) in poses.iter().enumerate() {
            let s = spline.knots()[i];
            assert!((spline.sample_position(s).position - p).amax() < 1e-12);
            let got = spline.sample_orientation(s).rotation;
            assert!((got.matrix() - r.matrix()).norm() < 1e-10);
            assert!(spline.sample_orientation(s).phi_prime.norm() < 1e-12);
        }
    }

    #[test]
    fn position_is_c2_at_interior_knots() {
        let spline = random_spline(11, 7);
        for i in 1..spline.segment_count() {
            let s = spline.knots()[i];
            let h = spline.knots()[i] - spline.knots()[i - 1];
            let left = &spline.position_segments[i - 1];
            let eval = |c: &CubicSegment, tau: f64| {
                (
                    c.a + tau * (c.b + tau * (c.c + tau * c.d)),
                    c.b + tau * (2.0 * c.c + 3.0 * tau * c.d),
                    2.0 * c.c + 6.0 * tau * c.d,
                )
            };
            let (p0, d0, dd0) = eval(left, h);
            let (p1, d1, dd1) = eval(&spline.position_segments[i], 0.0);
            assert!((p0 - p1).amax() < 1e-9, "value at knot {s}");
            assert!((d0 - d1).amax() < 1e-9, "slope at knot {s}");
            assert!((dd0 - dd1).amax() < 1e-9, "curvature at knot {s}");
        }
        // Natural end conditions.
        assert!(spline.sample_position(0.0).d2p_ds2.amax() < 1e-9);
        assert!(spline.sample_position(1.0).d2p_ds2.amax() < 1e-9);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let spline = random_spline(5, 5);
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let s: f64 = rng.random_range(0.01..0.99);
            // stay away from knots where the FD stencil straddles two segments
            if spline.knots().iter().any(|k| (k - s).abs() < 2.0 * h) {
                continue;
            }
            let sample = spline.sample_position(s);
            let fd = (spline.sample_position(s + h).position
                - spline.sample_position(s - h).position)
                / (2.0 * h);
            assert!((fd - sample.dp_ds).norm() / sample.dp_ds.norm() < 1e-6);

            let t = spline.unit_tangent(s).unwrap();
            let fd_t = (spline.unit_tangent(s + h).unwrap().tangent
                - spline.unit_tangent(s - h).unwrap().tangent)
                / (2.0 * h);
            assert!(
                (fd_t - t.dtangent_ds).norm() / t.dtangent_ds.norm().max(1e-3) < 1e-5,
                "tangent derivative at {s}"
            );

            let o = spline.sample_orientation(s);
            let (seg, _, _) = spline.locate(s);
            let start = spline.orientation_segments[seg].start.transpose();
            let phi = |x: f64| log_map(&(start * spline.sample_orientation(x).rotation)).unwrap();
            let fd_phi = (phi(s + h) - phi(s - h)) / (2.0 * h);
            assert!(
                (fd_phi - o.phi_prime).norm() / o.phi_prime.norm().max(1e-3) < 1e-5,
                "phi_prime at {s}"
            );
        }
    }

    #[test]
    fn tangent_is_perpendicular_to_radius_on_circle() {
        let poses: Vec<_> = (0..=64)
            .map(|i| {
                let a = 1.5 * PI * i as f64 / 64.0;
                (Vector3::new(a.cos(), a.sin(), 0.0), RotationSO3::identity())
            })
            .collect();
        let spline = PathSpline::from_poses(&poses).unwrap();
        // The natural end conditions flatten the first and last few segments.
        for k in 5..=45 {
            let s = k as f64 / 50.0;
            let p = spline.sample_position(s).position;
            let t = spline.unit_tangent(s).unwrap().tangent;
            assert!(t.dot(&p.normalize()).abs() < 1e-3, "s = {s}");
        }
    }

    #[test]
    fn via_point_text_roundtrip() {
        let spline_points = ViaPoint::equally_spaced(&[
            (Vector3::new(0.1, 0.2, 0.3), exp_map(&Vector3::new(0.1, 0.0, 0.2))),
            (Vector3::new(0.4, 0.2, 0.3), exp_map(&Vector3::new(0.0, 0.5, 0.2))),
            (Vector3::new(0.4, 0.6, 0.3), RotationSO3::identity()),
        ]);
        let parsed = parse_via_points(&format_via_points(&spline_points)).unwrap();
        assert_eq!(parsed.len(), 3);
        for (a, b) in parsed.iter().zip(&spline_points) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.s, b.s);
            assert!((a.orientation.matrix() - b.orientation.matrix()).amax() < 1e-14);
        }
    }

    #[test]
    fn via_point_parser_reports_bad_lines() {
        assert!(parse_via_points("0 0 0 1 0 0").is_err());
        assert!(parse_via_points("0 0 0 1 0 0 x").is_err());
        assert_eq!(parse_via_points("# only a comment\n\n").unwrap().len(), 0);
    }
}
