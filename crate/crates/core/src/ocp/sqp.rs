//! Gauss-Newton SQP over the condensed horizon.
//!
//! The dynamics are linear, so every state is an affine function of the stacked inputs
//! `U = [u_1; …; u_{N−1}]`: `x_k = x̄_k + S_k δU`. Each iteration linearises the residuals and
//! barriers at the current rollout, solves a dense QP in `δU` and takes the full step.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::constraints::{build_stage_constraints_at, StageBarriers};
use super::cost::state_residual;
use super::errors::tracking_errors;
use super::{discrete_dynamics, OcpConfig, OcpInput, OcpState};
use crate::barriers::ConstraintRow;
use crate::distancefield::ObstacleSphere;
use crate::kinematics::RobotModel;
use crate::pathspline::PathSpline;
use crate::qp::{QpProblem, QpResiduals, QpSettings, QpSolution, QpSolver, QpStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Contouring control: the path parameter is a decision variable.
    #[default]
    Rmpcc,
    /// Tracking of the time-indexed reference `s_ref(t) = clamp(v_desired t, 0, 1)`.
    TtMpc,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Rmpcc => "rmpcc",
            ControllerKind::TtMpc => "tt_mpc",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmpcc" => Ok(ControllerKind::Rmpcc),
            "tt_mpc" => Ok(ControllerKind::TtMpc),
            other => Err(Error::Argument(format!(
                "unknown controller {other:?} (expected rmpcc or tt_mpc)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleQp,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasibleQp => "infeasible_qp",
        }
    }
}

/// Wall-clock seconds per phase, summed over SQP iterations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveTimings {
    pub total: f64,
    /// Manipulability, distances and barrier rows.
    pub distance: f64,
    /// Error Jacobians, residuals and condensing.
    pub linearization: f64,
    pub qp: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveStats {
    pub timings: SolveTimings,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    /// Worst residuals over the QPs solved in this call.
    pub qp_residuals: QpResiduals,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u_sequence: Vec<OcpInput>,
    pub x_prediction: Vec<OcpState>,
    pub status: SolveStatus,
    pub stats: SolveStats,
    /// Barrier rows of the last linearisation and the states they were built at.
    pub rows: Vec<ConstraintRow>,
    pub linearization: Vec<OcpState>,
    /// Safety quantities at the measured state.
    pub mu: f64,
    pub d_self: Option<f64>,
    pub d_env: Option<f64>,
}

impl SolveResult {
    pub fn first_input(&self) -> &OcpInput {
        &self.u_sequence[0]
    }
}

/// `clamp(v_desired t, 0, 1)`.
pub fn reference_parameter(t: f64, v_desired: f64) -> f64 {
    (v_desired * t).clamp(0.0, 1.0)
}

/// Dense QP in `δU` plus the data needed to interpret its solution.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub qp: QpProblem,
    /// Rollout of the linearisation inputs.
    pub xbar: Vec<OcpState>,
    pub ubar: Vec<OcpInput>,
    /// `∂x_k/∂U` for every stage.
    pub sensitivities: Vec<DMatrix<f64>>,
    pub rows: Vec<ConstraintRow>,
    /// `‖r(Ū)‖²`, the cost at the linearisation point.
    pub cost: f64,
    first_barriers: StageBarriers,
    distance_time: Duration,
}

#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub model: RobotModel,
    pub spline: PathSpline,
    pub config: OcpConfig,
    pub kind: ControllerKind,
}

impl OcpProblem {
    pub fn new(model: RobotModel, spline: PathSpline, config: OcpConfig, kind: ControllerKind) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        Ok(OcpProblem { model, spline, config, kind })
    }

    fn n(&self) -> usize {
        self.model.dof()
    }

    /// Decision inputs per stage.
    pub fn nu(&self) -> usize {
        match self.kind {
            ControllerKind::Rmpcc => self.n() + 1,
            ControllerKind::TtMpc => self.n(),
        }
    }

    /// Propagated state components per stage.
    pub fn nx(&self) -> usize {
        match self.kind {
            ControllerKind::Rmpcc => self.n() + 2,
            ControllerKind::TtMpc => self.n(),
        }
    }

    pub fn input_count(&self) -> usize {
        self.config.horizon - 1
    }

    fn reference_state(&self, q: DVector<f64>, t: f64) -> OcpState {
        let v = self.config.weights.v_desired;
        let s = reference_parameter(t, v);
        let v_s = if v * t < 1.0 { v } else { 0.0 };
        OcpState::new(q, s, v_s)
    }

    /// Clamps the measured state into the state box. For the tracking controller `s` and
    /// `v_s` are replaced by the time-indexed reference.
    pub fn project_state(&self, x: &OcpState, t: f64) -> OcpState {
        let q = x.q.zip_zip_map(&self.model.q_min, &self.model.q_max, |v, lo, hi| v.clamp(lo, hi));
        match self.kind {
            ControllerKind::Rmpcc => {
                let b = &self.config.bounds;
                OcpState::new(q, x.s.clamp(b.s[0], b.s[1]), x.v_s.clamp(b.v_s[0], b.v_s[1]))
            }
            ControllerKind::TtMpc => self.reference_state(q, t),
        }
    }

    pub fn rollout(&self, x0: &OcpState, t: f64, us: &[OcpInput]) -> Vec<OcpState> {
        let dt = self.config.dt;
        let mut xs = Vec::with_capacity(us.len() + 1);
        xs.push(x0.clone());
        for (k, u) in us.iter().enumerate() {
            let prev = &xs[k];
            let next = match self.kind {
                ControllerKind::Rmpcc => discrete_dynamics(prev, u, dt),
                ControllerKind::TtMpc => self.reference_state(&prev.q + &u.qd * dt, t + (k + 1) as f64 * dt),
            };
            xs.push(next);
        }
        xs
    }

    /// Previous inputs shifted by one stage with the last one repeated, or zeros.
    pub fn initial_guess(&self, warm: Option<&SolveResult>) -> Vec<OcpInput> {
        let count = self.input_count();
        match warm {
            Some(w) if w.u_sequence.len() == count => {
                let mut us: Vec<OcpInput> = w.u_sequence[1..].to_vec();
                us.push(w.u_sequence[count - 1].clone());
                us
            }
            _ => vec![OcpInput::zeros(self.n()); count],
        }
    }

    fn input_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        let nu = self.nu();
        let mut lo = DVector::zeros(nu);
        let mut hi = DVector::zeros(nu);
        lo.rows_mut(0, n).copy_from(&self.model.qd_min);
        hi.rows_mut(0, n).copy_from(&self.model.qd_max);
        if nu > n {
            lo[n] = self.config.bounds.vd_s[0];
            hi[n] = self.config.bounds.vd_s[1];
        }
        (lo, hi)
    }

    fn state_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.n();
        let nx = self.nx();
        let mut lo = DVector::zeros(nx);
        let mut hi = DVector::zeros(nx);
        lo.rows_mut(0, n).copy_from(&self.model.q_min);
        hi.rows_mut(0, n).copy_from(&self.model.q_max);
        if nx > n {
            let b = &self.config.bounds;
            lo[n] = b.s[0];
            hi[n] = b.s[1];
            lo[n + 1] = b.v_s[0];
            hi[n + 1] = b.v_s[1];
        }
        (lo, hi)
    }

    fn state_slice(&self, x: &OcpState) -> DVector<f64> {
        match self.kind {
            ControllerKind::Rmpcc => x.to_vector(),
            ControllerKind::TtMpc => x.q.clone(),
        }
    }

    fn input_slice(&self, u: &OcpInput) -> DVector<f64> {
        match self.kind {
            ControllerKind::Rmpcc => u.to_vector(),
            ControllerKind::TtMpc => u.qd.clone(),
        }
    }

    /// `∂x_k/∂U` for `k = 1 … N`.
    pub fn sensitivities(&self) -> Vec<DMatrix<f64>> {
        let (n, nu, nx) = (self.n(), self.nu(), self.nx());
        let dt = self.config.dt;
        let m = nu * self.input_count();
        let mut out = Vec::with_capacity(self.config.horizon);
        let mut s = DMatrix::zeros(nx, m);
        out.push(s.clone());
        for k in 0..self.input_count() {
            if self.kind == ControllerKind::Rmpcc {
                let vel = s.row(n + 1).into_owned();
                let mut srow = s.row_mut(n);
                srow += vel * dt;
            }
            for i in 0..n {
                s[(i, k * nu + i)] += dt;
            }
            if self.kind == ControllerKind::Rmpcc {
                s[(n, k * nu + n)] += 0.5 * dt * dt;
                s[(n + 1, k * nu + n)] += dt;
            }
            out.push(s.clone());
        }
        out
    }

    fn barriers(
        &self,
        xs: &[OcpState],
        obstacle: Option<&ObstacleSphere>,
        pool: Option<&rayon::ThreadPool>,
    ) -> Result<Vec<StageBarriers>> {
        let stage = |k: usize| {
            let q = &xs[k].q;
            let kin = self.model.forward_kinematics(q);
            build_stage_constraints_at(
                &self.model,
                &self.config.self_distance,
                &self.config.barriers,
                q,
                &kin,
                obstacle,
                k,
            )
        };
        let count = self.input_count();
        match pool {
            Some(pool) => pool.install(|| (0..count).into_par_iter().map(stage).collect()),
            None => (0..count).map(stage).collect(),
        }
    }

    /// State residual rows and their Jacobian with respect to the propagated state.
    fn state_residuals(
        &self,
        xs: &[OcpState],
        t: f64,
        pool: Option<&rayon::ThreadPool>,
    ) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        let w = self.config.weights;
        let dt = self.config.dt;
        let stage = |k: usize| -> Result<(DVector<f64>, DMatrix<f64>)> {
            let x = &xs[k];
            let kin = self.model.forward_kinematics(&x.q);
            match self.kind {
                ControllerKind::Rmpcc => {
                    let (r, jx, _) = state_residual(&self.spline, &self.model, &kin, x, &w)?;
                    Ok((r, jx))
                }
                ControllerKind::TtMpc => {
                    let s_ref = reference_parameter(t + k as f64 * dt, w.v_desired);
                    let te = tracking_errors(&self.spline, &self.model, &kin, s_ref)?;
                    let n = self.n();
                    let (sc, so) = (w.w_c.sqrt(), w.w_o.sqrt());
                    let mut r = DVector::zeros(6);
                    let mut jx = DMatrix::zeros(6, n);
                    r.rows_mut(0, 3).copy_from(&(te.e * sc));
                    r.rows_mut(3, 3).copy_from(&(te.e_o * so));
                    jx.rows_mut(0, 3).copy_from(&(te.de * sc));
                    jx.rows_mut(3, 3).copy_from(&(te.de_o * so));
                    Ok((r, jx))
                }
            }
        };
        let count = self.config.horizon;
        match pool {
            Some(pool) => pool.install(|| (0..count).into_par_iter().map(stage).collect()),
            None => (0..count).map(stage).collect(),
        }
    }

    /// Linearises the problem at the rollout of `ubar` from `x0`.
    pub fn condense(
        &self,
        x0: &OcpState,
        t: f64,
        ubar: &[OcpInput],
        obstacle: Option<&ObstacleSphere>,
        pool: Option<&rayon::ThreadPool>,
    ) -> Result<CondensedQp> {
        let (n, nu, nx) = (self.n(), self.nu(), self.nx());
        let steps = self.input_count();
        let m = nu * steps;
        let w = self.config.weights;
        let xbar = self.rollout(x0, t, ubar);

        let t_dist = Instant::now();
        let barriers = self.barriers(&xbar, obstacle, pool)?;
        let distance_time = t_dist.elapsed();

        let sens = self.sensitivities();
        let residuals = self.state_residuals(&xbar, t, pool)?;

        // Stacked residual r and its Jacobian G with respect to U.
        let input_rows = if self.kind == ControllerKind::Rmpcc { 2 * n + 1 } else { 2 * n };
        let state_rows: usize = residuals.iter().map(|(r, _)| r.len()).sum();
        let rows = state_rows + steps * input_rows;
        let mut r = DVector::zeros(rows);
        let mut g = DMatrix::zeros(rows, m);
        let mut at = 0;
        for (k, (rk, jk)) in residuals.iter().enumerate() {
            let len = rk.len();
            r.rows_mut(at, len).copy_from(rk);
            if k > 0 {
                g.view_mut((at, 0), (len, m)).copy_from(&(jk * &sens[k]));
            }
            at += len;
        }
        let (sq, sd, sa) = (w.w_qd.sqrt(), w.w_dqd.sqrt(), w.w_vds.sqrt());
        for k in 0..steps {
            let u = &ubar[k];
            for i in 0..n {
                r[at + i] = sq * u.qd[i];
                g[(at + i, k * nu + i)] = sq;
                if k > 0 {
                    r[at + n + i] = sd * (u.qd[i] - ubar[k - 1].qd[i]);
                    g[(at + n + i, k * nu + i)] = sd;
                    g[(at + n + i, (k - 1) * nu + i)] = -sd;
                }
            }
            if self.kind == ControllerKind::Rmpcc {
                r[at + 2 * n] = sa * u.vd_s;
                g[(at + 2 * n, k * nu + n)] = sa;
            }
            at += input_rows;
        }
        let gt = g.transpose();
        let mut h = &gt * &g * 2.0;
        h = (&h + h.transpose()) * 0.5;
        let grad = &gt * &r * 2.0;

        // Constraints: input box, state box for k = 2 … N, barrier rows for k = 1 … N−1.
        let all_rows: Vec<ConstraintRow> = barriers.iter().flat_map(|b| b.rows.iter().cloned()).collect();
        let c = m + (self.config.horizon - 1) * nx + all_rows.len();
        let mut a = DMatrix::zeros(c, m);
        let mut lower = DVector::zeros(c);
        let mut upper = DVector::zeros(c);
        let (ulo, uhi) = self.input_bounds();
        for k in 0..steps {
            let ub = self.input_slice(&ubar[k]);
            for i in 0..nu {
                let row = k * nu + i;
                a[(row, row)] = 1.0;
                lower[row] = ulo[i] - ub[i];
                upper[row] = uhi[i] - ub[i];
            }
        }
        let (xlo, xhi) = self.state_bounds();
        let mut row = m;
        for k in 1..self.config.horizon {
            let xb = self.state_slice(&xbar[k]);
            a.view_mut((row, 0), (nx, m)).copy_from(&sens[k]);
            for i in 0..nx {
                lower[row + i] = xlo[i] - xb[i];
                upper[row + i] = xhi[i] - xb[i];
            }
            row += nx;
        }
        for cr in &all_rows {
            let k = cr.stage;
            let mut coeff = cr.coeff_x.rows(0, nx).transpose() * &sens[k];
            for i in 0..nu {
                coeff[k * nu + i] += cr.coeff_u[i];
            }
            a.row_mut(row).copy_from(&coeff);
            lower[row] = f64::NEG_INFINITY;
            upper[row] = cr.rhs - cr.coeff_u.rows(0, nu).dot(&self.input_slice(&ubar[k]));
            row += 1;
        }

        Ok(CondensedQp {
            qp: QpProblem { h, g: grad, a, lower, upper },
            xbar,
            ubar: ubar.to_vec(),
            sensitivities: sens,
            rows: all_rows,
            cost: r.norm_squared(),
            first_barriers: barriers.into_iter().next().expect("horizon has at least one input"),
            distance_time,
        })
    }

    fn apply_step(&self, ubar: &[OcpInput], delta: &DVector<f64>) -> Vec<OcpInput> {
        let (n, nu) = (self.n(), self.nu());
        let (lo, hi) = self.input_bounds();
        ubar.iter()
            .enumerate()
            .map(|(k, u)| {
                let qd = DVector::from_fn(n, |i, _| (u.qd[i] + delta[k * nu + i]).clamp(lo[i], hi[i]));
                let vd_s = if nu > n { (u.vd_s + delta[k * nu + n]).clamp(lo[n], hi[n]) } else { 0.0 };
                OcpInput { qd, vd_s }
            })
            .collect()
    }
}

/// One receding-horizon solve from the measured state `x0` at time `t`.
pub fn sqp_solve(
    problem: &OcpProblem,
    x0: &OcpState,
    t: f64,
    warm: Option<&SolveResult>,
    obstacle: Option<&ObstacleSphere>,
    pool: Option<&rayon::ThreadPool>,
) -> Result<SolveResult> {
    let start = Instant::now();
    let x0 = problem.project_state(x0, t);
    let solver = QpSolver::new(QpSettings {
        max_iter: problem.config.qp_max_iter,
        ..QpSettings::default()
    });
    let mut us = problem.initial_guess(warm);
    let mut stats = SolveStats::default();
    let mut status = SolveStatus::Optimal;
    let mut last: Option<CondensedQp> = None;
    let mut previous_qp: Option<QpSolution> = None;

    for _ in 0..problem.config.sqp_iters {
        let t_lin = Instant::now();
        let cqp = problem.condense(&x0, t, &us, obstacle, pool)?;
        let lin = t_lin.elapsed();
        stats.timings.distance += cqp.distance_time.as_secs_f64();
        stats.timings.linearization += (lin - cqp.distance_time.min(lin)).as_secs_f64();

        let t_qp = Instant::now();
        let sol = solver.solve(&cqp.qp, previous_qp.as_ref())?;
        stats.timings.qp += t_qp.elapsed().as_secs_f64();
        stats.sqp_iterations += 1;
        stats.qp_iterations += sol.iterations;
        stats.qp_residuals.primal = stats.qp_residuals.primal.max(sol.residuals.primal);
        stats.qp_residuals.dual = stats.qp_residuals.dual.max(sol.residuals.dual);
        stats.qp_residuals.complementarity = stats.qp_residuals.complementarity.max(sol.residuals.complementarity);

        match sol.status {
            QpStatus::PrimalInfeasible => {
                status = SolveStatus::InfeasibleQp;
                last = Some(cqp);
                break;
            }
            QpStatus::MaxIter => status = SolveStatus::MaxIter,
            QpStatus::Optimal => {}
        }
        us = problem.apply_step(&cqp.ubar, &sol.primal);
        last = Some(cqp);
        previous_qp = Some(sol);
    }

    let last = last.expect("at least one SQP iteration");
    let x_prediction = problem.rollout(&x0, t, &us);
    stats.timings.total = start.elapsed().as_secs_f64();
    Ok(SolveResult {
        u_sequence: us,
        x_prediction,
        status,
        stats,
        rows: last.rows,
        linearization: last.xbar,
        mu: last.first_barriers.mu,
        d_self: last.first_barriers.d_self,
        d_env: last.first_barriers.d_env,
    })
}

/// Stateful receding-horizon controller: keeps the previous solution for warm starts.
pub struct Controller {
    problem: OcpProblem,
    previous: Option<SolveResult>,
    pool: Option<rayon::ThreadPool>,
}

impl Controller {
    pub fn new(problem: OcpProblem) -> Result<Self> {
        let pool = if problem.config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(problem.config.threads)
                    .build()
                    .map_err(|e| Error::Argument(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Controller {
            problem,
            previous: None,
            pool,
        })
    }

    pub fn problem(&self) -> &OcpProblem {
        &self.problem
    }

    pub fn solve(&mut self, x0: &OcpState, t: f64, obstacle: Option<&ObstacleSphere>) -> Result<SolveResult> {
        let result = sqp_solve(&self.problem, x0, t, self.previous.as_ref(), obstacle, self.pool.as_ref())?;
        self.previous = Some(result.clone());
        Ok(result)
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{parse_robot, Joint};
    use crate::liegroup::RotationSO3;
    use crate::pathspline::ViaPoint;
    use crate::qp::solve_qp;
    use nalgebra::{Isometry3, Vector3};

    fn panda() -> RobotModel {
        parse_robot(include_str!("../../data/panda.toml")).unwrap()
    }

    fn home() -> DVector<f64> {
        DVector::from_column_slice(&[0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785])
    }

    fn straight_problem(kind: ControllerKind) -> OcpProblem {
        let robot = panda();
        let kin = robot.forward_kinematics(&home());
        let poses = vec![
            (kin.ee.position, kin.ee.orientation),
            (kin.ee.position + Vector3::new(0.0, 0.25, 0.0), kin.ee.orientation),
        ];
        let spline = PathSpline::from_poses(&poses).unwrap();
        OcpProblem::new(robot, spline, OcpConfig::default(), kind).unwrap()
    }

    #[test]
    fn on_path_start_gives_small_inputs() {
        let p = straight_problem(ControllerKind::Rmpcc);
        let v = p.config.weights.v_desired;
        let x0 = OcpState::new(home(), 0.0, v);
        let res = sqp_solve(&p, &x0, 0.0, None, None, None).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        let u = res.first_input();
        // The path advances at 0.25 m · v_desired; joint rates of that order are expected.
        assert!(u.qd.norm() < 0.2, "{}", u.qd.norm());
        assert!(u.vd_s.abs() < 0.05, "{}", u.vd_s);
    }

    #[test]
    fn prediction_is_rollout_of_inputs() {
        for kind in [ControllerKind::Rmpcc, ControllerKind::TtMpc] {
            let p = straight_problem(kind);
            let x0 = OcpState::new(home(), 0.0, 0.0);
            let res = sqp_solve(&p, &x0, 0.3, None, None, None).unwrap();
            let again = p.rollout(&p.project_state(&x0, 0.3), 0.3, &res.u_sequence);
            assert_eq!(res.x_prediction.len(), p.config.horizon);
            for (a, b) in res.x_prediction.iter().zip(&again) {
                assert!((a.to_vector() - b.to_vector()).amax() <= 1e-10);
            }
        }
    }

    #[test]
    fn sensitivities_match_rollout_differences() {
        let p = straight_problem(ControllerKind::Rmpcc);
        let x0 = OcpState::new(home(), 0.2, 0.03);
        let us: Vec<OcpInput> = (0..p.input_count())
            .map(|k| OcpInput { qd: DVector::from_element(7, 0.01 * k as f64), vd_s: 0.1 * k as f64 })
            .collect();
        let base = p.rollout(&x0, 0.0, &us);
        let sens = p.sensitivities();
        let nu = p.nu();
        for col in 0..nu * p.input_count() {
            let mut pert = us.clone();
            let (k, i) = (col / nu, col % nu);
            if i < 7 {
                pert[k].qd[i] += 1.0;
            } else {
                pert[k].vd_s += 1.0;
            }
            let moved = p.rollout(&x0, 0.0, &pert);
            for stage in 0..p.config.horizon {
                let diff = moved[stage].to_vector() - base[stage].to_vector();
                assert!((diff - sens[stage].column(col)).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn obstacle_rows_hold_after_the_step() {
        let p = straight_problem(ControllerKind::Rmpcc);
        let kin = p.model.forward_kinematics(&home());
        // Sphere just beside the path, close enough for the barrier to shape the step.
        let obs = ObstacleSphere::new(kin.ee.position + Vector3::new(0.0, 0.06, 0.2), 0.16).unwrap();
        let x0 = OcpState::new(home(), 0.0, 0.05);
        let res = sqp_solve(&p, &x0, 0.0, None, Some(&obs), None).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
        let nx = p.nx();
        for row in &res.rows {
            let k = row.stage;
            let dx = res.x_prediction[k].to_vector() - res.linearization[k].to_vector();
            let u = res.u_sequence[k].to_vector();
            assert!(row.slack(&u, &dx.rows(0, nx).into_owned()) >= -1e-6, "{:?}", row.kind);
        }
    }

    #[test]
    fn qp_step_does_not_increase_model_cost() {
        let p = straight_problem(ControllerKind::Rmpcc);
        let x0 = OcpState::new(home() + DVector::from_element(7, 0.02), 0.1, 0.0);
        let us = p.initial_guess(None);
        let c = p.condense(&x0, 0.0, &us, None, None).unwrap();
        let sol = solve_qp(&c.qp, None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(c.qp.objective(&sol.primal) <= 1e-12);
    }

    /// One revolute joint about z with a unit arm along x; only ω_z enters μ, which is then
    /// constant.
    fn single_joint() -> RobotModel {
        RobotModel {
            name: "single".into(),
            joints: vec![Joint {
                name: "j1".into(),
                origin: Isometry3::identity(),
                axis: Vector3::z_axis(),
            }],
            q_min: DVector::from_element(1, -3.0),
            q_max: DVector::from_element(1, 3.0),
            qd_min: DVector::from_element(1, -0.4),
            qd_max: DVector::from_element(1, 0.4),
            tool: Isometry3::translation(1.0, 0.0, 0.0),
            ee_link: 1,
            capsules: vec![],
            manipulability_rows: vec![5],
        }
    }

    #[test]
    fn two_stage_toy_matches_kkt_enumeration() {
        // Straight path x = 1, y from −0.5 to 0.5, identity orientation. Robot at q = 0.3,
        // s = 0.3. The GN QP is rebuilt here from finite differences of the plain cost and
        // solved by enumerating the active sets of the input box.
        let model = single_joint();
        let poses = vec![
            (Vector3::new(1.0, -0.5, 0.0), RotationSO3::identity()),
            (Vector3::new(1.0, 0.5, 0.0), RotationSO3::identity()),
        ];
        let spline = PathSpline::build(&ViaPoint::equally_spaced(&poses)).unwrap();
        let config = OcpConfig { horizon: 2, sqp_iters: 1, ..OcpConfig::default() };
        let p = OcpProblem::new(model.clone(), spline.clone(), config, ControllerKind::Rmpcc).unwrap();
        let x0 = OcpState::new(DVector::from_element(1, 0.3), 0.3, 0.0);
        let res = sqp_solve(&p, &x0, 0.0, None, None, None).unwrap();

        let w = p.config.weights;
        let dt = p.config.dt;
        let residual = |u: &[f64; 2]| -> DVector<f64> {
            let uu = OcpInput { qd: DVector::from_element(1, u[0]), vd_s: u[1] };
            let x1 = discrete_dynamics(&x0, &uu, dt);
            let mut r = Vec::new();
            for (x, input) in [(&x0, Some(&uu)), (&x1, None)] {
                let err = super::super::path_errors(&spline, &model, x).unwrap();
                r.extend((err.e_c * w.w_c.sqrt()).iter());
                r.extend((err.e_l * w.w_l.sqrt()).iter());
                r.push(w.w_vs.sqrt() * (w.v_desired - x.v_s));
                r.extend((err.e_o * w.w_o.sqrt()).iter());
                if let Some(u) = input {
                    r.push(w.w_qd.sqrt() * u.qd[0]);
                    r.push(w.w_vds.sqrt() * u.vd_s);
                }
            }
            DVector::from_vec(r)
        };
        let r0 = residual(&[0.0, 0.0]);
        let h = 1e-6;
        let mut jac = DMatrix::zeros(r0.len(), 2);
        for j in 0..2 {
            let mut up = [0.0, 0.0];
            let mut um = [0.0, 0.0];
            up[j] = h;
            um[j] = -h;
            jac.set_column(j, &((residual(&up) - residual(&um)) / (2.0 * h)));
        }
        let hess = jac.transpose() * &jac * 2.0;
        let grad = jac.transpose() * &r0 * 2.0;
        let lo = [-0.4, -2.0];
        let hi = [0.4, 2.0];
        let mut best: Option<(f64, [f64; 2])> = None;
        for code in 0..9 {
            let fix = [code % 3, code / 3];
            // Solve with fixed components at their bound, free ones from the KKT rows.
            let mut kkt = hess.clone();
            let mut rhs = -grad.clone();
            for j in 0..2 {
                if fix[j] > 0 {
                    kkt.row_mut(j).fill(0.0);
                    kkt[(j, j)] = 1.0;
                    rhs[j] = if fix[j] == 1 { lo[j] } else { hi[j] };
                }
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let z = [sol[0], sol[1]];
            if (0..2).all(|j| z[j] >= lo[j] - 1e-12 && z[j] <= hi[j] + 1e-12) {
                let f = 0.5 * sol.dot(&(&hess * &sol)) + grad.dot(&sol);
                if best.is_none_or(|(bf, _)| f < bf) {
                    best = Some((f, z));
                }
            }
        }
        let (_, z) = best.unwrap();
        let u = res.first_input();
        assert!((u.qd[0] - z[0]).abs() < 1e-6, "{} vs {}", u.qd[0], z[0]);
        assert!((u.vd_s - z[1]).abs() < 1e-6, "{} vs {}", u.vd_s, z[1]);
    }

    #[test]
    fn reference_parameter_clamps() {
        assert_eq!(reference_parameter(25.0, 0.05), 1.0);
        assert_eq!(reference_parameter(20.0, 0.05), 1.0);
        assert_eq!(reference_parameter(-1.0, 0.05), 0.0);
        assert!((reference_parameter(10.0, 0.05) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn parallel_linearisation_is_bitwise_identical() {
        let p = straight_problem(ControllerKind::Rmpcc);
        let kin = p.model.forward_kinematics(&home());
        let obs = ObstacleSphere::new(kin.ee.position + Vector3::new(0.0, 0.1, 0.25), 0.16).unwrap();
        let x0 = OcpState::new(home(), 0.0, 0.05);
        let serial = sqp_solve(&p, &x0, 0.0, None, Some(&obs), None).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let parallel = sqp_solve(&p, &x0, 0.0, None, Some(&obs), Some(&pool)).unwrap();
        assert_eq!(serial.u_sequence, parallel.u_sequence);
    }
}
