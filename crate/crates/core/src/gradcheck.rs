//! Finite-difference audit of every analytic derivative used by the controller.
//!
//! Each quantity is evaluated at `count` random states and compared against central
//! differences with step [`FD_STEP`]. The error of one sample is
//! `‖analytic − fd‖∞ / max(‖fd‖∞, 1)`; the report keeps the worst sample per quantity.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::barriers::{cbf_row, BarrierKind, DEFAULT_DELTA};
use crate::distancefield::{env_link_distances, self_min_distance, MlpModel, ObstacleSphere};
use crate::kinematics::{GradientMode, RobotModel};
use crate::ocp::{error_jacobians, path_errors, stage_cost_quadratics, tracking_errors, OcpInput, OcpState, Weights};
use crate::pathspline::PathSpline;
use crate::sim::{lemniscate_via_points, LemniscateParams};
use crate::{Error, Result};

pub const FD_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Names of the audited quantities, in report order.
pub const QUANTITIES: [&str; 11] = [
    "contouring_jacobian",
    "lag_jacobian",
    "orientation_jacobian",
    "tracking_position_jacobian",
    "tracking_orientation_jacobian",
    "stage_cost_gradient",
    "manipulability_gradient",
    "self_distance_gradient",
    "env_distance_gradient",
    "barrier_gradient",
    "mlp_gradient",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub count: usize,
    /// Negates the analytic value of this quantity before comparing; used to show that the
    /// suite detects a sign error.
    pub flip_sign: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityReport {
    pub name: &'static str,
    pub samples: usize,
    pub worst_error: f64,
    /// Joint configuration of the worst sample.
    pub worst_state: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub quantities: Vec<QuantityReport>,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.quantities.iter().all(|q| q.samples > 0 && q.worst_error < tolerance)
    }

    pub fn failures(&self, tolerance: f64) -> Vec<&QuantityReport> {
        self.quantities
            .iter()
            .filter(|q| !(q.samples > 0 && q.worst_error < tolerance))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<32}{:>8}{:>14}\n", "quantity", "samples", "worst_rel_err");
        for q in &self.quantities {
            let _ = writeln!(out, "{:<32}{:>8}{:>14.3e}", q.name, q.samples, q.worst_error);
        }
        out
    }
}

fn sample_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    (analytic - fd).amax() / fd.amax().max(1.0)
}

/// Central differences of a matrix-valued function of a vector; column `j` is `∂f/∂z_j`
/// flattened column-major.
fn central_difference(
    z: &DVector<f64>,
    f: &mut dyn FnMut(&DVector<f64>) -> Result<DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let f0 = f(z)?;
    let rows = f0.len();
    let mut out = DMatrix::zeros(rows, z.len());
    for j in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += FD_STEP;
        zm[j] -= FD_STEP;
        let d = (f(&zp)? - f(&zm)?) / (2.0 * FD_STEP);
        out.set_column(j, &DVector::from_column_slice(d.as_slice()));
    }
    Ok(out)
}

fn as_matrix(v: &Vector3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 1, v.as_slice())
}

fn as_row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

struct Audit {
    reports: Vec<QuantityReport>,
    flip: Option<String>,
}

impl Audit {
    fn record(&mut self, name: &'static str, analytic: DMatrix<f64>, fd: &DMatrix<f64>, q: &DVector<f64>) {
        let analytic = if self.flip.as_deref() == Some(name) { -analytic } else { analytic };
        let err = sample_error(&analytic, fd);
        let rep = self.reports.iter_mut().find(|r| r.name == name).expect("known quantity");
        rep.samples += 1;
        if !(err <= rep.worst_error) {
            rep.worst_error = err;
            rep.worst_state = Some(q.clone());
        }
    }
}

/// Runs the suite on `model`. The reference path is a lemniscate anchored at the pose of
/// the joint-range midpoint; states are drawn around that configuration.
pub fn run_gradcheck(model: &RobotModel, options: &GradcheckOptions) -> Result<GradcheckReport> {
    if options.count == 0 {
        return Err(Error::Argument("gradcheck needs a positive sample count".into()));
    }
    if let Some(name) = &options.flip_sign {
        if !QUANTITIES.contains(&name.as_str()) {
            return Err(Error::Argument(format!("unknown quantity {name:?}")));
        }
    }
    model.validate()?;
    let n = model.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let q_mid = (&model.q_min + &model.q_max) * 0.5;
    let anchor = model.forward_kinematics(&q_mid).ee;
    let spline = PathSpline::build(&lemniscate_via_points(
        &LemniscateParams { scale: 0.2, n_points: 17, depth: 0.05, tilt: 0.2 },
        &anchor.position,
        &anchor.orientation,
    )?)?;
    let weights = Weights::default();
    let net = MlpModel::random(n, &[16, 16], 1, &mut rng);
    let mut audit = Audit {
        reports: QUANTITIES
            .iter()
            .map(|&name| QuantityReport { name, samples: 0, worst_error: 0.0, worst_state: None })
            .collect(),
        flip: options.flip_sign.clone(),
    };

    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < options.count {
        attempts += 1;
        if attempts > 20 * options.count + 100 {
            return Err(Error::Domain("could not draw enough admissible states".into()));
        }
        let q = DVector::from_fn(n, |i, _| {
            (q_mid[i] + rng.random_range(-0.6..0.6)).clamp(model.q_min[i], model.q_max[i])
        });
        let x = OcpState::new(q.clone(), rng.random_range(0.0..1.0), rng.random_range(-0.2..0.2));
        let u = OcpInput { qd: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), vd_s: rng.random_range(-1.0..1.0) };
        let u_prev = OcpInput { qd: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)), vd_s: 0.0 };
        let offset = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let radius = rng.random_range(0.05..0.16);
        // States with large orientation errors or near-singular poses are redrawn.
        let Ok(errors) = path_errors(&spline, model, &x) else { continue };
        if errors.e_o.norm() > 2.5 || model.manipulability(&q) < 1e-3 {
            continue;
        }
        accepted += 1;
        let z = x.to_vector();

        let jac = error_jacobians(&spline, model, &x)?;
        let fd = central_difference(&z, &mut |z| {
            let e = path_errors(&spline, model, &OcpState::from_vector(z))?;
            Ok(as_matrix(&e.e_c))
        })?;
        audit.record("contouring_jacobian", jac.de_c.clone(), &fd, &q);
        let fd = central_difference(&z, &mut |z| {
            let e = path_errors(&spline, model, &OcpState::from_vector(z))?;
            Ok(as_matrix(&e.e_l))
        })?;
        audit.record("lag_jacobian", jac.de_l.clone(), &fd, &q);
        let fd = central_difference(&z, &mut |z| {
            let e = path_errors(&spline, model, &OcpState::from_vector(z))?;
            Ok(as_matrix(&e.e_o))
        })?;
        audit.record("orientation_jacobian", jac.de_o.clone(), &fd, &q);

        let kin = model.forward_kinematics(&q);
        let te = tracking_errors(&spline, model, &kin, x.s)?;
        let fd = central_difference(&q, &mut |q| {
            let t = tracking_errors(&spline, model, &model.forward_kinematics(q), x.s)?;
            Ok(as_matrix(&t.e))
        })?;
        audit.record("tracking_position_jacobian", te.de.clone(), &fd, &q);
        let fd = central_difference(&q, &mut |q| {
            let t = tracking_errors(&spline, model, &model.forward_kinematics(q), x.s)?;
            Ok(as_matrix(&t.e_o))
        })?;
        audit.record("tracking_orientation_jacobian", te.de_o.clone(), &fd, &q);

        // Gauss-Newton drops second derivatives of the residuals, so the exact gradient
        // 2Jᵀr is what must match.
        let quad = stage_cost_quadratics(&spline, model, &x, Some(&u), Some(&u_prev), &weights)?;
        let mut zu = z.clone().resize_vertically(n + 2 + n + 1, 0.0);
        zu.rows_mut(n + 2, n + 1).copy_from(&u.to_vector());
        let fd = central_difference(&zu, &mut |zu| {
            let xs = OcpState::from_vector(&zu.rows(0, n + 2).into_owned());
            let us = OcpInput::from_vector(&zu.rows(n + 2, n + 1).into_owned());
            let v = stage_cost_quadratics(&spline, model, &xs, Some(&us), Some(&u_prev), &weights)?.value;
            Ok(DMatrix::from_element(1, 1, v))
        })?;
        audit.record("stage_cost_gradient", as_row(&quad.gradient), &fd, &q);

        let fd = central_difference(&q, &mut |q| Ok(DMatrix::from_element(1, 1, model.manipulability(q))))?;
        let grad = model.manipulability_gradient_with(&q, GradientMode::Analytic)?;
        audit.record("manipulability_gradient", as_row(&grad), &fd, &q);

        let d_self = self_min_distance(model, &q)?;
        let fd = central_difference(&q, &mut |q| Ok(DMatrix::from_element(1, 1, self_min_distance(model, q)?.distance)))?;
        audit.record("self_distance_gradient", as_row(&d_self.gradient), &fd, &q);

        let obs = ObstacleSphere::new(kin.ee.position + offset, radius)?;
        let links = env_link_distances(model, &q, &obs);
        let analytic = DMatrix::from_fn(links.len(), n, |r, c| links[r].gradient[c]);
        let fd = central_difference(&q, &mut |q| {
            let l = env_link_distances(model, q, &obs);
            Ok(DMatrix::from_fn(l.len(), 1, |r, _| l[r].distance))
        })?;
        audit.record("env_distance_gradient", analytic, &fd, &q);

        // State coefficient of a barrier row is ∂RBF(h(q))/∂q; checked on the self-distance
        // barrier shifted so that both branches of the relaxed barrier are visited.
        let shift = rng.random_range(-0.05..0.1);
        let h = d_self.distance - shift;
        let row = cbf_row(BarrierKind::SelfCollision, h, &d_self.gradient, DEFAULT_DELTA, 0);
        let fd = central_difference(&q, &mut |q| {
            let h = self_min_distance(model, q)?.distance - shift;
            Ok(DMatrix::from_element(1, 1, crate::barriers::rbf(h, DEFAULT_DELTA).value))
        })?;
        audit.record("barrier_gradient", as_row(&row.coeff_x.rows(0, n).into_owned()), &fd, &q);

        // The network is piecewise linear; points within an FD step of a kink are redrawn.
        let mut q_net = q.clone();
        while net.kink_margin(&q_net) <= 10.0 * FD_STEP {
            q_net = DVector::from_fn(n, |i, _| q[i] + rng.random_range(-1e-3..1e-3));
        }
        let (_, mlp_jac) = net.forward(&q_net)?;
        let fd = central_difference(&q_net, &mut |q| {
            let v = net.forward(q)?.0;
            Ok(DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
        })?;
        audit.record("mlp_gradient", mlp_jac, &fd, &q_net);
    }
    Ok(GradcheckReport { quantities: audit.reports })
}
