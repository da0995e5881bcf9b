//! Dense convex QP solver.
//!
//! ```text
//!     minimize    ½ xᵀHx + gᵀx
//!     subject to  l ≤ Ax ≤ u
//! ```
//!
//! Dual active-set method of Goldfarb and Idnani on the factor `J = L⁻ᵀ` (with `H = LLᵀ`),
//! updated by Givens reflections as constraints enter and leave the active set. Rows of `A`
//! are normalised before solving. Rows with `l = u` are equalities.
//!
//! Dual convention: `Hx + g + Aᵀy = 0`, `y_i > 0` at an active upper bound and `y_i < 0` at an
//! active lower bound.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let m = g.len();
        QpProblem {
            h,
            g,
            a: DMatrix::zeros(0, m),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim();
        let c = self.constraint_count();
        if self.h.shape() != (m, m) || self.a.ncols() != m || self.lower.len() != c || self.upper.len() != c {
            return Err(Error::Argument(format!(
                "inconsistent QP dimensions: H {:?}, g {}, A {:?}, l {}, u {}",
                self.h.shape(),
                m,
                self.a.shape(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        if self.h.iter().chain(self.g.iter()).chain(self.a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Argument("QP data contains non-finite entries".into()));
        }
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-10 * scale {
            return Err(Error::Argument("QP Hessian is not symmetric".into()));
        }
        for i in 0..c {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(Error::Argument(format!(
                    "constraint {i} has bounds [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    PrimalInfeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QpResiduals {
    /// max violation of `l ≤ Ax ≤ u`.
    pub primal: f64,
    /// ‖Hx + g + Aᵀy‖∞.
    pub dual: f64,
    /// max |y_i| · distance of `a_iᵀx` to the bound `y_i` belongs to.
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub dual: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: QpResiduals,
    /// Active constraint sides at the solution, usable as a warm start.
    pub active_set: Vec<(usize, Side)>,
    /// Diagonal shift added to `H` when its factorisation failed.
    pub regularization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    /// Violation below which a normalised constraint counts as satisfied.
    pub feasibility_tol: f64,
    /// First diagonal shift tried when `H` is not numerically positive definite.
    pub regularization: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iter: 4000,
            feasibility_tol: 1e-9,
            regularization: 1e-9,
        }
    }
}

/// `nᵀx ≥ b` (or `= b`) with unit `n`.
struct Halfspace {
    row: usize,
    side: Side,
    n: DVector<f64>,
    b: f64,
    norm: f64,
}

fn halfspaces(p: &QpProblem) -> std::result::Result<Vec<Halfspace>, usize> {
    let mut eq = Vec::new();
    let mut ineq = Vec::new();
    for i in 0..p.constraint_count() {
        let row = p.a.row(i).transpose();
        let norm = row.norm();
        let (l, u) = (p.lower[i], p.upper[i]);
        if norm < 1e-14 {
            if l > 1e-12 || u < -1e-12 {
                return Err(i);
            }
            continue;
        }
        let n = row / norm;
        if l == u {
            eq.push(Halfspace { row: i, side: Side::Equal, n, b: l / norm, norm });
            continue;
        }
        if l.is_finite() {
            ineq.push(Halfspace { row: i, side: Side::Lower, n: n.clone(), b: l / norm, norm });
        }
        if u.is_finite() {
            ineq.push(Halfspace { row: i, side: Side::Upper, n: -n, b: -u / norm, norm });
        }
    }
    let mut all = eq;
    all.extend(ineq);
    Ok(all)
}

/// Reusable solver; owns no state between calls beyond its settings.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
}

pub fn solve_qp(p: &QpProblem, warm: Option<&QpSolution>) -> Result<QpSolution> {
    QpSolver::default().solve(p, warm)
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        QpSolver { settings }
    }

    pub fn solve(&self, p: &QpProblem, warm: Option<&QpSolution>) -> Result<QpSolution> {
        p.validate()?;
        let m = p.dim();
        let (chol, regularization) = self.factor(&p.h)?;
        let hs = match halfspaces(p) {
            Ok(hs) => hs,
            Err(_) => {
                return Ok(self.finish(p, DVector::zeros(m), &[], &[], &[], QpStatus::PrimalInfeasible, 0, regularization))
            }
        };
        let n_eq = hs.iter().take_while(|h| h.side == Side::Equal).count();

        if let Some(warm) = warm {
            if let Some((x, active, lambda)) = self.try_active_set(p, &chol, &hs, &warm.active_set) {
                return Ok(self.finish(p, x, &hs, &active, &lambda, QpStatus::Optimal, 1, regularization));
            }
        }

        let mut gi = DualActiveSet::new(&chol, &p.g, m);
        let status = gi.run(&hs, n_eq, &self.settings);
        let iterations = gi.iterations;
        Ok(self.finish(p, gi.x, &hs, &gi.active, &gi.u, status, iterations, regularization))
    }

    fn factor(&self, h: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
        if let Some(c) = Cholesky::new(h.clone()) {
            return Ok((c, 0.0));
        }
        let m = h.nrows();
        let mut rho = self.settings.regularization;
        let cap = 1e-2 * h.amax().max(1.0);
        while rho <= cap {
            if let Some(c) = Cholesky::new(h + DMatrix::identity(m, m) * rho) {
                log::debug!("QP Hessian regularised with rho = {rho:e}");
                return Ok((c, rho));
            }
            rho *= 10.0;
        }
        Err(Error::Argument("QP Hessian is not positive semidefinite".into()))
    }

    /// Solves the equality-constrained KKT system on a previous active set; accepts the result
    /// only if it is primal feasible and dual feasible.
    fn try_active_set(
        &self,
        p: &QpProblem,
        chol: &Cholesky<f64, Dyn>,
        hs: &[Halfspace],
        warm: &[(usize, Side)],
    ) -> Option<(DVector<f64>, Vec<usize>, Vec<f64>)> {
        let mut active: Vec<usize> = hs
            .iter()
            .enumerate()
            .filter(|(_, h)| h.side == Side::Equal)
            .map(|(i, _)| i)
            .collect();
        for &(row, side) in warm {
            if side == Side::Equal {
                continue;
            }
            let idx = hs.iter().position(|h| h.row == row && h.side == side)?;
            active.push(idx);
        }
        let m = p.dim();
        let k = active.len();
        if k > m {
            return None;
        }
        let n = DMatrix::from_fn(m, k, |r, c| hs[active[c]].n[r]);
        let b = DVector::from_fn(k, |i, _| hs[active[i]].b);
        // x = H⁻¹(Nλ − g), NᵀH⁻¹N λ = b + NᵀH⁻¹g
        let hinv_n = chol.solve(&n);
        let hinv_g = chol.solve(&p.g);
        let lambda = if k > 0 {
            let s = n.transpose() * &hinv_n;
            let rhs = &b + n.transpose() * &hinv_g;
            Cholesky::new(s)?.solve(&rhs)
        } else {
            DVector::zeros(0)
        };
        let x = &hinv_n * &lambda - hinv_g;
        let tol = self.settings.feasibility_tol;
        for (j, &idx) in active.iter().enumerate() {
            if hs[idx].side != Side::Equal && lambda[j] < -tol {
                return None;
            }
        }
        if hs.iter().any(|h| h.n.dot(&x) - h.b < -tol) {
            return None;
        }
        Some((x, active, lambda.iter().copied().collect()))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        p: &QpProblem,
        x: DVector<f64>,
        hs: &[Halfspace],
        active: &[usize],
        lambda: &[f64],
        status: QpStatus,
        iterations: usize,
        regularization: f64,
    ) -> QpSolution {
        let mut y = DVector::zeros(p.constraint_count());
        for (&idx, &l) in active.iter().zip(lambda) {
            let h = &hs[idx];
            // Each halfspace contributes −λ n to Hx + g; n = ±a/‖a‖.
            y[h.row] += match h.side {
                Side::Lower | Side::Equal => -l / h.norm,
                Side::Upper => l / h.norm,
            };
        }
        let residuals = residuals(p, &x, &y);
        let active_set = active.iter().map(|&i| (hs[i].row, hs[i].side)).collect();
        QpSolution {
            primal: x,
            dual: y,
            status,
            iterations,
            residuals,
            active_set,
            regularization,
        }
    }
}

pub fn residuals(p: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> QpResiduals {
    let ax = &p.a * x;
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..p.constraint_count() {
        primal = primal.max(p.lower[i] - ax[i]).max(ax[i] - p.upper[i]);
        if y[i] > 0.0 {
            complementarity = complementarity.max(y[i] * (p.upper[i] - ax[i]).abs());
        } else if y[i] < 0.0 {
            complementarity = complementarity.max(-y[i] * (ax[i] - p.lower[i]).abs());
        }
    }
    let dual = (&p.h * x + &p.g + p.a.transpose() * y).amax();
    QpResiduals {
        primal,
        dual,
        complementarity,
    }
}

/// Working state of the dual method: `x`, the active halfspaces with multipliers `u`, and the
/// factors `J`, `R` with `Jᵀ N_active = [R; 0]`.
struct DualActiveSet {
    x: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
    active: Vec<usize>,
    u: Vec<f64>,
    iterations: usize,
}

impl DualActiveSet {
    fn new(chol: &Cholesky<f64, Dyn>, g: &DVector<f64>, m: usize) -> Self {
        let l = chol.l();
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(m, m))
            .expect("Cholesky factor has a positive diagonal");
        DualActiveSet {
            x: -chol.solve(g),
            j: linv.transpose(),
            r: DMatrix::zeros(m, m),
            r_norm: 1.0,
            active: Vec::with_capacity(m),
            u: Vec::with_capacity(m),
            iterations: 0,
        }
    }

    fn iq(&self) -> usize {
        self.active.len()
    }

    /// `z = J₂J₂ᵀn` (primal direction) and `r = R⁻¹J₁ᵀn` (dual direction) for normal `n`.
    fn directions(&self, d: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let iq = self.iq();
        let m = self.x.len();
        let z = self.j.columns(iq, m - iq) * d.rows(iq, m - iq);
        let mut r = d.rows(0, iq).into_owned();
        for i in (0..iq).rev() {
            let mut acc = r[i];
            for k in i + 1..iq {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        (z, r)
    }

    /// Appends a column with `Jᵀn = d` to the factorisation. Returns false if `n` is
    /// numerically dependent on the active normals.
    fn add_constraint(&mut self, d: &mut DVector<f64>) -> bool {
        let iq = self.iq();
        let m = self.x.len();
        for jj in (iq + 1..m).rev() {
            let (mut cc, mut ss) = (d[jj - 1], d[jj]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            cc /= h;
            ss /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            for k in 0..m {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                self.j[(k, jj - 1)] = t1 * cc + t2 * ss;
                self.j[(k, jj)] = ss * t1 - cc * t2;
            }
        }
        if d[iq].abs() <= f64::EPSILON * 1e3 * self.r_norm {
            return false;
        }
        for i in 0..=iq {
            self.r[(i, iq)] = d[i];
        }
        self.r_norm = self.r_norm.max(d[iq].abs());
        true
    }

    /// Removes the active entry at position `pos` and restores the triangular `R`.
    fn delete_constraint(&mut self, pos: usize) {
        let m = self.x.len();
        self.active.remove(pos);
        self.u.remove(pos);
        let old = self.iq() + 1;
        for c in pos..old - 1 {
            for i in 0..m {
                self.r[(i, c)] = self.r[(i, c + 1)];
            }
        }
        for i in 0..m {
            self.r[(i, old - 1)] = 0.0;
        }
        let iq = self.iq();
        for jj in pos..iq {
            let (mut cc, mut ss) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = 0.0;
            if cc < 0.0 {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            for k in jj + 1..iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                self.r[(jj, k)] = t1 * cc + t2 * ss;
                self.r[(jj + 1, k)] = ss * t1 - cc * t2;
            }
            for k in 0..m {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                self.j[(k, jj)] = t1 * cc + t2 * ss;
                self.j[(k, jj + 1)] = ss * t1 - cc * t2;
            }
        }
    }

    fn run(&mut self, hs: &[Halfspace], n_eq: usize, settings: &QpSettings) -> QpStatus {
        for (idx, h) in hs.iter().enumerate().take(n_eq) {
            let mut d = self.j.transpose() * &h.n;
            let (z, r) = self.directions(&d);
            let zn = z.dot(&h.n);
            let t = if zn > 1e-12 * d.norm_squared() {
                (h.b - h.n.dot(&self.x)) / zn
            } else {
                0.0
            };
            self.x += &z * t;
            for (uk, rk) in self.u.iter_mut().zip(r.iter()) {
                *uk -= t * rk;
            }
            if self.add_constraint(&mut d) {
                self.active.push(idx);
                self.u.push(t);
            } else if (h.n.dot(&self.x) - h.b).abs() > settings.feasibility_tol {
                return QpStatus::PrimalInfeasible;
            }
        }

        let mut excluded = vec![false; hs.len()];
        loop {
            let mut worst: Option<(usize, f64)> = None;
            for (i, h) in hs.iter().enumerate().skip(n_eq) {
                if excluded[i] || self.active.contains(&i) {
                    continue;
                }
                let s = h.n.dot(&self.x) - h.b;
                if s < -settings.feasibility_tol && worst.is_none_or(|(_, w)| s < w) {
                    worst = Some((i, s));
                }
            }
            let Some((p, _)) = worst else {
                return QpStatus::Optimal;
            };
            let np = &hs[p].n;
            let mut u_plus = 0.0;
            loop {
                self.iterations += 1;
                if self.iterations > settings.max_iter {
                    return QpStatus::MaxIter;
                }
                let mut d = self.j.transpose() * np;
                let (z, r) = self.directions(&d);
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for k in n_eq_active(&self.active, n_eq)..self.iq() {
                    if r[k] > 0.0 && self.u[k] / r[k] < t1 {
                        t1 = self.u[k] / r[k];
                        drop = Some(k);
                    }
                }
                let zn = z.dot(np);
                let s_p = np.dot(&self.x) - hs[p].b;
                let t2 = if zn > 1e-12 * d.norm_squared() {
                    -s_p / zn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    return QpStatus::PrimalInfeasible;
                }
                for (uk, rk) in self.u.iter_mut().zip(r.iter()) {
                    *uk -= t * rk;
                }
                u_plus += t;
                if t2.is_finite() {
                    self.x += &z * t;
                }
                if t2 <= t1 {
                    if self.add_constraint(&mut d) {
                        self.active.push(p);
                        self.u.push(u_plus);
                    } else {
                        excluded[p] = true;
                    }
                    break;
                }
                self.delete_constraint(drop.expect("finite partial step has a blocking multiplier"));
            }
        }
    }
}

fn n_eq_active(active: &[usize], n_eq: usize) -> usize {
    active.iter().take_while(|&&i| i < n_eq).count()
}
