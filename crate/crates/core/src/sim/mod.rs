//! Closed-loop kinematic simulation.
//!
//! The plant is the controller's own model: each tick reads the obstacle, solves the
//! controller, applies the first input through [`discrete_dynamics`] and logs the result.

mod metrics;
mod scenario;
mod trace;

use log::warn;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use metrics::{comparison_table, compute_metrics, MetricsReport, Stat};
pub use scenario::{lemniscate_scenario, lemniscate_via_points, LemniscateParams, ObstacleTrack, Scenario, ScenarioOverrides};
pub use trace::{csv_header, fill_accelerations, TraceLog, TraceRecord};

use crate::distancefield::{env_link_distances_at, self_collision_pairs, self_min_distance_at};
use crate::ocp::{
    discrete_dynamics, path_errors, reference_parameter, Controller, ControllerKind, OcpInput, OcpProblem,
    OcpState, SolveStatus, SolveTimings,
};
use crate::{Error, Result};

/// Runs `scenario` to completion. Solver failures and infeasible QPs reuse the previous
/// input; a non-finite state aborts with the index of the offending record.
pub fn run_closed_loop(scenario: &Scenario) -> Result<TraceLog> {
    scenario.validate()?;
    let robot = &scenario.robot;
    let spline = scenario.spline()?;
    let problem = OcpProblem::new(robot.clone(), spline.clone(), scenario.ocp.clone(), scenario.controller)?;
    let mut controller = Controller::new(problem)?;
    let n = robot.dof();
    let dt = scenario.dt;
    let v_des = scenario.ocp.weights.v_desired;
    let has_pairs = !self_collision_pairs(robot).is_empty();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let noise = (scenario.noise_std > 0.0)
        .then(|| Normal::new(0.0, scenario.noise_std).expect("validated standard deviation"));

    let mut x = match scenario.controller {
        ControllerKind::Rmpcc => OcpState::new(scenario.q0.clone(), 0.0, 0.0),
        ControllerKind::TtMpc => OcpState::new(scenario.q0.clone(), 0.0, v_des),
    };
    let mut u_prev = OcpInput::zeros(n);
    let ticks = scenario.tick_count();
    let mut records = Vec::with_capacity(ticks);

    for k in 0..ticks {
        let t = k as f64 * dt;
        if scenario.controller == ControllerKind::TtMpc {
            x.s = reference_parameter(t, v_des);
            x.v_s = if v_des * t < 1.0 { v_des } else { 0.0 };
        }
        let obstacle = scenario.obstacle.as_ref().map(|o| o.sphere_at(t));

        let (u, status, timings, kkt_residual) = match controller.solve(&x, t, obstacle.as_ref()) {
            Ok(res) => {
                let r = res.stats.qp_residuals;
                let kkt = r.primal.max(r.dual).max(r.complementarity);
                if res.status == SolveStatus::InfeasibleQp {
                    warn!("t = {t:.2}: infeasible QP, reusing the previous input");
                    (u_prev.clone(), res.status.as_str().to_string(), res.stats.timings, kkt)
                } else {
                    (res.first_input().clone(), res.status.as_str().to_string(), res.stats.timings, kkt)
                }
            }
            Err(e) => {
                warn!("t = {t:.2}: solver error ({e}), reusing the previous input");
                (u_prev.clone(), "solver_error".to_string(), SolveTimings::default(), f64::NAN)
            }
        };
        let u = match scenario.controller {
            ControllerKind::Rmpcc => u,
            ControllerKind::TtMpc => OcpInput { qd: u.qd, vd_s: 0.0 },
        };

        let kin = robot.forward_kinematics(&x.q);
        let errors = path_errors(&spline, robot, &x);
        let (e_c, e_o) = match &errors {
            Ok(e) => (e.e_c.norm(), e.e_o.norm()),
            Err(_) => (f64::NAN, f64::NAN),
        };
        let d_self = if has_pairs {
            self_min_distance_at(robot, &kin)?.distance
        } else {
            f64::INFINITY
        };
        let d_env = obstacle
            .as_ref()
            .map(|o| {
                env_link_distances_at(robot, &kin, o)
                    .iter()
                    .map(|l| l.distance - o.radius)
                    .fold(f64::INFINITY, f64::min)
            })
            .unwrap_or(f64::INFINITY);
        let ee_velocity = kin.point_jacobian_linear(robot.ee_link, &kin.ee.position) * &u.qd;
        records.push(TraceRecord {
            t,
            q: x.q.clone(),
            qd: u.qd.clone(),
            s: x.s,
            v_s: x.v_s,
            vd_s: u.vd_s,
            e_c,
            e_o,
            mu: robot.manipulability(&x.q),
            d_self,
            d_env,
            ee_velocity: nalgebra::Vector3::new(ee_velocity[0], ee_velocity[1], ee_velocity[2]),
            ee_acceleration: 0.0,
            kkt_residual,
            status,
            timings: if scenario.record_timings { timings } else { SolveTimings::default() },
        });

        let mut next = discrete_dynamics(&x, &u, dt);
        if let Some(noise) = &noise {
            next.q += DVector::from_fn(n, |_, _| noise.sample(&mut rng));
        }
        if !next.is_finite() {
            return Err(Error::Aborted {
                record: k + 1,
                message: format!("non-finite state after t = {t}"),
            });
        }
        x = next;
        u_prev = u;
    }
    fill_accelerations(&mut records, dt);
    Ok(TraceLog { dof: n, dt, records })
}
