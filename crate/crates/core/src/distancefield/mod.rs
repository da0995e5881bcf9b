//! Differentiable minimum-distance evaluators for the self-collision and environment-collision
//! barriers.
//!
//! The default backend places capsules on the links and differentiates through the witness
//! points (held fixed, envelope theorem). [`MlpModel`] offers the learned alternative for the
//! self-distance with the same value/gradient interface.

mod mlp;

use nalgebra::{DVector, Vector3};

use crate::kinematics::{Kinematics, RobotModel};
use crate::{Error, Result};

pub use mlp::{MlpLayer, MlpModel};

const DEGENERATE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleSphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl ObstacleSphere {
    pub fn new(center: Vector3<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Argument(format!("obstacle radius must be > 0, got {radius}")));
        }
        Ok(ObstacleSphere { center, radius })
    }
}

/// Closest points between two segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentDistance {
    pub distance: f64,
    pub witness_a: Vector3<f64>,
    pub witness_b: Vector3<f64>,
}

/// A distance value and its gradient with respect to the joint angles.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceGradient {
    pub distance: f64,
    pub gradient: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkDistance {
    pub link: usize,
    pub distance: f64,
    pub gradient: DVector<f64>,
}

/// Exact minimum distance between segments `[a0, a1]` and `[b0, b1]`.
///
/// The result does not depend on the argument order: the pair is put into a canonical order
/// before the computation and the witnesses are swapped back.
pub fn segment_segment_distance(
    a0: &Vector3<f64>,
    a1: &Vector3<f64>,
    b0: &Vector3<f64>,
    b1: &Vector3<f64>,
) -> SegmentDistance {
    let key_a = [a0.x, a0.y, a0.z, a1.x, a1.y, a1.z];
    let key_b = [b0.x, b0.y, b0.z, b1.x, b1.y, b1.z];
    let swap = key_b.iter().partial_cmp(key_a.iter()) == Some(std::cmp::Ordering::Less);
    if swap {
        let r = closest_points(b0, b1, a0, a1);
        SegmentDistance {
            distance: r.distance,
            witness_a: r.witness_b,
            witness_b: r.witness_a,
        }
    } else {
        closest_points(a0, a1, b0, b1)
    }
}

fn closest_points(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> SegmentDistance {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= DEGENERATE && e <= DEGENERATE {
        s = 0.0;
        t = 0.0;
    } else if a <= DEGENERATE {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= DEGENERATE {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > DEGENERATE * a * e {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    let witness_a = p1 + d1 * s;
    let witness_b = p2 + d2 * t;
    SegmentDistance {
        distance: (witness_a - witness_b).norm(),
        witness_a,
        witness_b,
    }
}

/// Closest point to `p` on segment `[a, b]`.
pub fn point_segment_closest(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    let d = b - a;
    let len2 = d.dot(&d);
    if len2 <= DEGENERATE {
        return *a;
    }
    let t = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
    a + d * t
}

/// Capsule pairs that enter the self-distance: all pairs on links at least two apart, in a
/// fixed order (the pair index used for tie-breaking).
pub fn self_collision_pairs(model: &RobotModel) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, ci) in model.capsules.iter().enumerate() {
        for (j, cj) in model.capsules.iter().enumerate().skip(i + 1) {
            if ci.link.abs_diff(cj.link) >= 2 {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Links that can collide with the environment: every moving link that carries a capsule.
pub fn env_links(model: &RobotModel) -> Vec<usize> {
    let mut links: Vec<usize> = model
        .capsules
        .iter()
        .map(|c| c.link)
        .filter(|&l| l >= 1)
        .collect();
    links.sort_unstable();
    links.dedup();
    links
}

fn world_segment(model: &RobotModel, kin: &Kinematics, idx: usize) -> (Vector3<f64>, Vector3<f64>) {
    let c = &model.capsules[idx];
    (kin.to_world(c.link, &c.a), kin.to_world(c.link, &c.b))
}

/// Signed distance of every self-collision pair with its gradient.
pub fn self_pair_distances(model: &RobotModel, kin: &Kinematics) -> Vec<DistanceGradient> {
    let n = model.dof();
    self_collision_pairs(model)
        .into_iter()
        .map(|(i, j)| {
            let (a0, a1) = world_segment(model, kin, i);
            let (b0, b1) = world_segment(model, kin, j);
            let seg = segment_segment_distance(&a0, &a1, &b0, &b1);
            let (ci, cj) = (&model.capsules[i], &model.capsules[j]);
            let distance = seg.distance - ci.radius - cj.radius;
            let gradient = if seg.distance > 1e-12 {
                let normal = (seg.witness_a - seg.witness_b) / seg.distance;
                let ja = kin.point_jacobian_linear(ci.link, &seg.witness_a);
                let jb = kin.point_jacobian_linear(cj.link, &seg.witness_b);
                ((ja - jb).transpose() * normal).into_owned()
            } else {
                DVector::zeros(n)
            };
            DistanceGradient { distance, gradient }
        })
        .collect()
}

/// Minimum signed self-distance over the capsule pairs with its gradient. Ties keep the pair
/// with the lowest index.
pub fn self_min_distance(model: &RobotModel, q: &DVector<f64>) -> Result<DistanceGradient> {
    let kin = model.forward_kinematics(q);
    self_min_distance_at(model, &kin)
}

pub fn self_min_distance_at(model: &RobotModel, kin: &Kinematics) -> Result<DistanceGradient> {
    let pairs = self_pair_distances(model, kin);
    let mut best: Option<DistanceGradient> = None;
    for p in pairs {
        if best.as_ref().is_none_or(|b| p.distance < b.distance) {
            best = Some(p);
        }
    }
    best.ok_or_else(|| Error::Argument("robot has no self-collision capsule pairs".into()))
}

/// Smooth minimum `−T log Σ exp(−d_i / T)` of the pair distances, with the matching gradient.
pub fn self_softmin_distance_at(
    model: &RobotModel,
    kin: &Kinematics,
    temperature: f64,
) -> Result<DistanceGradient> {
    if !(temperature > 0.0) {
        return Err(Error::Argument("softmin temperature must be > 0".into()));
    }
    let pairs = self_pair_distances(model, kin);
    softmin(&pairs, temperature)
        .ok_or_else(|| Error::Argument("robot has no self-collision capsule pairs".into()))
}

pub fn softmin(values: &[DistanceGradient], temperature: f64) -> Option<DistanceGradient> {
    let dmin = values.iter().map(|v| v.distance).fold(f64::INFINITY, f64::min);
    if !dmin.is_finite() {
        return None;
    }
    let weights: Vec<f64> = values
        .iter()
        .map(|v| (-(v.distance - dmin) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let distance = dmin - temperature * total.ln();
    let mut gradient = DVector::zeros(values[0].gradient.len());
    for (w, v) in weights.iter().zip(values) {
        gradient += &v.gradient * (w / total);
    }
    Some(DistanceGradient { distance, gradient })
}

/// Distance from each collision link to the obstacle centre, minus the capsule radius. The
/// obstacle radius is not subtracted here.
pub fn env_link_distances(
    model: &RobotModel,
    q: &DVector<f64>,
    obstacle: &ObstacleSphere,
) -> Vec<LinkDistance> {
    let kin = model.forward_kinematics(q);
    env_link_distances_at(model, &kin, obstacle)
}

pub fn env_link_distances_at(
    model: &RobotModel,
    kin: &Kinematics,
    obstacle: &ObstacleSphere,
) -> Vec<LinkDistance> {
    let n = model.dof();
    env_links(model)
        .into_iter()
        .map(|link| {
            let mut best: Option<(f64, Vector3<f64>, Vector3<f64>)> = None;
            for (idx, c) in model.capsules.iter().enumerate().filter(|(_, c)| c.link == link) {
                let (a, b) = world_segment(model, kin, idx);
                let w = point_segment_closest(&obstacle.center, &a, &b);
                let offset = obstacle.center - w;
                let d = offset.norm() - c.radius;
                if best.as_ref().is_none_or(|(bd, _, _)| d < *bd) {
                    best = Some((d, w, offset));
                }
            }
            let (distance, witness, offset) = best.expect("link has a capsule");
            let norm = offset.norm();
            let gradient = if norm > 1e-12 {
                let jac = kin.point_jacobian_linear(link, &witness);
                -(jac.transpose() * (offset / norm))
            } else {
                DVector::zeros(n)
            };
            LinkDistance {
                link,
                distance,
                gradient,
            }
        })
        .collect()
}

/// Backend for the self-distance `d_self(q)`.
#[derive(Debug, Clone, Default)]
pub enum SelfDistanceBackend {
    /// Hard minimum over capsule pairs.
    #[default]
    Capsule,
    /// Log-sum-exp smoothed minimum over capsule pairs.
    CapsuleSoftmin { temperature: f64 },
    /// Learned predictor with a single output.
    Mlp(MlpModel),
}

impl SelfDistanceBackend {
    pub fn evaluate(
        &self,
        model: &RobotModel,
        q: &DVector<f64>,
        kin: &Kinematics,
    ) -> Result<DistanceGradient> {
        match self {
            SelfDistanceBackend::Capsule => self_min_distance_at(model, kin),
            SelfDistanceBackend::CapsuleSoftmin { temperature } => {
                self_softmin_distance_at(model, kin, *temperature)
            }
            SelfDistanceBackend::Mlp(net) => {
                if net.output_dim() != 1 {
                    return Err(Error::Argument(format!(
                        "self-distance network must have one output, has {}",
                        net.output_dim()
                    )));
                }
                let (value, jac) = net.forward(q)?;
                Ok(DistanceGradient {
                    distance: value[0],
                    gradient: jac.row(0).transpose(),
                })
            }
        }
    }
}
