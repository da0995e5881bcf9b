//! Control-barrier rows of one horizon stage.

use nalgebra::DVector;

use super::BarrierSettings;
use crate::barriers::{cbf_row, BarrierKind, ConstraintRow};
use crate::distancefield::{env_link_distances_at, self_collision_pairs, ObstacleSphere, SelfDistanceBackend};
use crate::kinematics::{Kinematics, RobotModel};
use crate::Result;

/// Barrier rows of a stage together with the raw safety quantities they were built from.
#[derive(Debug, Clone)]
pub struct StageBarriers {
    pub rows: Vec<ConstraintRow>,
    pub mu: f64,
    /// `None` when the robot has no self-collision pairs.
    pub d_self: Option<f64>,
    /// `min_l d_env,l − r_obs`; `None` without an obstacle.
    pub d_env: Option<f64>,
}

/// One singularity row, one self-collision row (when the robot has capsule pairs) and one row
/// per collision link when an obstacle is present.
pub fn build_stage_constraints(
    model: &RobotModel,
    backend: &SelfDistanceBackend,
    settings: &BarrierSettings,
    q: &DVector<f64>,
    obstacle: Option<&ObstacleSphere>,
    stage: usize,
) -> Result<StageBarriers> {
    let kin = model.forward_kinematics(q);
    build_stage_constraints_at(model, backend, settings, q, &kin, obstacle, stage)
}

pub(crate) fn build_stage_constraints_at(
    model: &RobotModel,
    backend: &SelfDistanceBackend,
    settings: &BarrierSettings,
    q: &DVector<f64>,
    kin: &Kinematics,
    obstacle: Option<&ObstacleSphere>,
    stage: usize,
) -> Result<StageBarriers> {
    let delta = settings.delta;
    let mut rows = Vec::new();

    let mu = model.manipulability(q);
    let grad_mu = model.manipulability_gradient_with(q, settings.manipulability_gradient)?;
    rows.push(cbf_row(BarrierKind::Singularity, mu - settings.eps_sing, &grad_mu, delta, stage));

    let has_pairs = matches!(backend, SelfDistanceBackend::Mlp(_)) || !self_collision_pairs(model).is_empty();
    let d_self = if has_pairs {
        let d = backend.evaluate(model, q, kin)?;
        rows.push(cbf_row(
            BarrierKind::SelfCollision,
            d.distance - settings.eps_self,
            &d.gradient,
            delta,
            stage,
        ));
        Some(d.distance)
    } else {
        None
    };

    let d_env = obstacle.map(|obs| {
        let mut min = f64::INFINITY;
        for link in env_link_distances_at(model, kin, obs) {
            let clearance = link.distance - obs.radius;
            min = min.min(clearance);
            rows.push(cbf_row(
                BarrierKind::EnvCollision { link: link.link },
                clearance - settings.eps_env,
                &link.gradient,
                delta,
                stage,
            ));
        }
        min
    });

    Ok(StageBarriers { rows, mu, d_self, d_env })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barriers::rbf;
    use crate::distancefield::env_links;
    use crate::kinematics::parse_robot;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn panda() -> RobotModel {
        parse_robot(include_str!("../../data/panda.toml")).unwrap()
    }

    fn home() -> DVector<f64> {
        DVector::from_column_slice(&[0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785])
    }

    #[test]
    fn far_obstacle_rows_are_vacuous() {
        let robot = panda();
        let obs = ObstacleSphere::new(Vector3::new(100.0, 0.0, 0.0), 0.16).unwrap();
        let b = build_stage_constraints(&robot, &SelfDistanceBackend::Capsule, &BarrierSettings::default(), &home(), Some(&obs), 0)
            .unwrap();
        assert_eq!(b.rows.len(), 2 + env_links(&robot).len());
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..100 {
            let u = DVector::from_fn(8, |i, _| if i < 7 { rng.random_range(-0.5..0.5) } else { 0.0 });
            for row in &b.rows[2..] {
                assert!(row.slack(&u, &DVector::zeros(9)) > 0.0);
            }
        }
    }

    #[test]
    fn singularity_row_rhs_in_log_branch() {
        let robot = panda();
        let settings = BarrierSettings::default();
        let b = build_stage_constraints(&robot, &SelfDistanceBackend::Capsule, &settings, &home(), None, 3).unwrap();
        let h = b.mu - settings.eps_sing;
        assert!(h > settings.delta);
        assert_eq!(b.rows[0].rhs, -rbf(h, settings.delta).value);
        assert_eq!(b.rows[0].stage, 3);
        assert_eq!(b.rows.len(), 2);
        assert!(b.d_env.is_none());
    }

    #[test]
    fn env_rows_subtract_obstacle_radius() {
        let robot = panda();
        let settings = BarrierSettings::default();
        let kin = robot.forward_kinematics(&home());
        let obs = ObstacleSphere::new(kin.ee.position + Vector3::new(0.4, 0.0, 0.0), 0.16).unwrap();
        let b = build_stage_constraints(&robot, &SelfDistanceBackend::Capsule, &settings, &home(), Some(&obs), 0).unwrap();
        let raw = env_link_distances_at(&robot, &kin, &obs);
        let min = raw.iter().map(|l| l.distance).fold(f64::INFINITY, f64::min);
        assert!((b.d_env.unwrap() - (min - 0.16)).abs() < 1e-15);
        for (row, link) in b.rows[2..].iter().zip(&raw) {
            assert!((row.h - (link.distance - 0.16 - settings.eps_env)).abs() < 1e-15);
        }
    }
}
