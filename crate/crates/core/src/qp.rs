//! Dense convex quadratic programs.
//!
//! ```text
//!     minimize    1/2 z' P z + q' z
//!     subject to  A z <= b
//!                 lb <= z <= ub
//! ```
//!
//! Solved with the Goldfarb-Idnani dual active-set method: start at the
//! unconstrained minimizer and repeatedly add the most violated constraint,
//! dropping active constraints whose multipliers would turn negative. Every
//! iterate is dual feasible, so the method stops either at the optimum or with
//! a certificate that the primal problem is infeasible (a violated constraint
//! for which neither a primal nor a dual step exists).
//!
//! `P` must be positive semidefinite. When its smallest eigenvalue is below
//! `1e-9` the solver adds `1e-8 I` before factorizing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const MIN_EIGEN: f64 = 1e-9;
const REGULARIZATION: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Problem without box bounds.
    pub fn new(p: DMatrix<f64>, q: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            a,
            b,
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }

    /// Largest violation of the inequality rows and box bounds (zero if feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let rows = (&self.a * z - &self.b).max().max(0.0);
        let bounds = (0..self.n())
            .map(|i| (self.lb[i] - z[i]).max(z[i] - self.ub[i]))
            .fold(0.0_f64, f64::max);
        rows.max(bounds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.p.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "cost Hessian is {:?}, expected {n}x{n}",
                self.p.shape()
            )));
        }
        if self.a.ncols() != n || self.a.nrows() != self.m() {
            return Err(Error::Dimension(format!(
                "constraint matrix is {:?}, expected {}x{n}",
                self.a.shape(),
                self.m()
            )));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(Error::Dimension("bound vectors must have length n".into()));
        }
        if (0..n).any(|i| self.lb[i] > self.ub[i]) {
            return Err(Error::Argument("lower bound exceeds upper bound".into()));
        }
        let asym = (&self.p - self.p.transpose()).amax();
        if asym > SYMMETRY_TOL * self.p.amax().max(1.0) {
            return Err(Error::Argument(format!(
                "cost Hessian is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let finite = self.p.iter().chain(self.q.iter()).chain(self.a.iter()).all(|v| v.is_finite())
            && self.b.iter().all(|v| !v.is_nan())
            && self.lb.iter().chain(self.ub.iter()).all(|v| !v.is_nan());
        if !finite {
            return Err(Error::NonFinite("quadratic program data"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `max |P z + q + A' lambda + mu|`.
    pub stationarity: f64,
    pub primal: f64,
    /// `max |lambda_i (A z - b)_i|` over rows and bounds.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    /// Multipliers of `A z <= b`, non-negative.
    pub row_duals: DVector<f64>,
    /// Box multipliers: positive when the upper bound is active, negative for the lower.
    pub bound_duals: DVector<f64>,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub regularized: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Active-set changes allowed; `None` means `10 (n + m) + 100`.
    pub max_iter: Option<usize>,
    /// Violation tolerance for declaring a constraint satisfied.
    pub feasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: None,
            feasibility_tol: 1e-10,
        }
    }
}

/// Internal constraint in the `n' z >= c` form used by the dual method.
#[derive(Debug, Clone, Copy)]
enum Constraint {
    /// `-A_i z >= -b_i`.
    Row(usize),
    /// `z_i >= lb_i`.
    Lower(usize),
    /// `-z_i >= -ub_i`.
    Upper(usize),
}

struct Workspace<'a> {
    prob: &'a QpProblem,
    n: usize,
    /// Column-major `n x n`; `J = L^{-T}` rotated as constraints enter.
    j: Vec<f64>,
    /// Column-major `n x n` upper triangular factor of the active normals.
    r: Vec<f64>,
    r_norm: f64,
    active: Vec<Constraint>,
    u: Vec<f64>,
}

impl Workspace<'_> {
    fn slack(&self, c: Constraint, z: &[f64]) -> f64 {
        match c {
            Constraint::Row(i) => {
                let dot: f64 = (0..self.n).map(|k| self.prob.a[(i, k)] * z[k]).sum();
                self.prob.b[i] - dot
            }
            Constraint::Lower(i) => z[i] - self.prob.lb[i],
            Constraint::Upper(i) => self.prob.ub[i] - z[i],
        }
    }

    fn normal_dot(&self, c: Constraint, v: &[f64]) -> f64 {
        match c {
            Constraint::Row(i) => -(0..self.n).map(|k| self.prob.a[(i, k)] * v[k]).sum::<f64>(),
            Constraint::Lower(i) => v[i],
            Constraint::Upper(i) => -v[i],
        }
    }

    /// `d = J' n_c`.
    fn jt_normal(&self, c: Constraint, d: &mut [f64]) {
        let n = self.n;
        for (k, dk) in d.iter_mut().enumerate() {
            let col = &self.j[k * n..(k + 1) * n];
            *dk = match c {
                Constraint::Row(i) => -(0..n).map(|t| col[t] * self.prob.a[(i, t)]).sum::<f64>(),
                Constraint::Lower(i) => col[i],
                Constraint::Upper(i) => -col[i],
            };
        }
    }

    fn add_constraint(&mut self, d: &mut [f64]) -> bool {
        let n = self.n;
        let iq = self.active.len();
        for jj in (iq + 1..n).rev() {
            let (mut cc, mut ss) = (d[jj - 1], d[jj]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            let (left, right) = self.j.split_at_mut(jj * n);
            let a = &mut left[(jj - 1) * n..];
            let b = &mut right[..n];
            for k in 0..n {
                let t1 = a[k];
                let t2 = b[k];
                a[k] = t1 * cc + t2 * ss;
                b[k] = xny * (t1 + a[k]) - t2;
            }
        }
        for row in 0..=iq {
            self.r[iq * n + row] = d[row];
        }
        if d[iq].abs() <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(d[iq].abs());
        true
    }

    fn delete_constraint(&mut self, l: usize) {
        let n = self.n;
        let iq = self.active.len();
        self.active.remove(l);
        self.u.remove(l);
        for col in l..iq - 1 {
            for row in 0..n {
                self.r[col * n + row] = self.r[(col + 1) * n + row];
            }
        }
        for row in 0..n {
            self.r[(iq - 1) * n + row] = 0.0;
        }
        let iq = iq - 1;
        for jj in l..iq {
            let (mut cc, mut ss) = (self.r[jj * n + jj], self.r[jj * n + jj + 1]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[jj * n + jj + 1] = 0.0;
            if cc < 0.0 {
                self.r[jj * n + jj] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[jj * n + jj] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in jj + 1..iq {
                let t1 = self.r[k * n + jj];
                let t2 = self.r[k * n + jj + 1];
                self.r[k * n + jj] = t1 * cc + t2 * ss;
                self.r[k * n + jj + 1] = xny * (t1 + self.r[k * n + jj]) - t2;
            }
            let (left, right) = self.j.split_at_mut((jj + 1) * n);
            let a = &mut left[jj * n..];
            let b = &mut right[..n];
            for k in 0..n {
                let t1 = a[k];
                let t2 = b[k];
                a[k] = t1 * cc + t2 * ss;
                b[k] = xny * (a[k] + t1) - t2;
            }
        }
    }

    /// Primal direction `z = J_2 d_2` and dual direction `r = R^{-1} d_1`.
    fn directions(&self, d: &[f64], z: &mut [f64], r: &mut [f64]) {
        let n = self.n;
        let iq = self.active.len();
        z.iter_mut().for_each(|v| *v = 0.0);
        for k in iq..n {
            let col = &self.j[k * n..(k + 1) * n];
            let dk = d[k];
            for (zi, cj) in z.iter_mut().zip(col) {
                *zi += cj * dk;
            }
        }
        for i in (0..iq).rev() {
            let mut sum = d[i];
            for k in i + 1..iq {
                sum -= self.r[k * n + i] * r[k];
            }
            r[i] = sum / self.r[i * n + i];
        }
    }
}

/// Relative size of `|d_2|^2` below which a constraint counts as dependent.
const DEPENDENCE_TOL: f64 = 1e-14;

/// Minimize the problem; see the module docs for the method.
pub fn solve(prob: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    prob.validate()?;
    let n = prob.n();
    let m = prob.m();
    if n == 0 {
        return Err(Error::Dimension("problem has no variables".into()));
    }

    let (chol, regularized) = factorize(&prob.p)?;

    // J = L^{-T}, upper triangular.
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Consistency("Cholesky factor is singular".into()))?;
    let j_mat = l_inv.transpose();

    let mut z = chol.solve(&(-&prob.q));

    let mut constraints: Vec<Constraint> = (0..m)
        .filter(|&i| prob.b[i] < f64::INFINITY)
        .map(Constraint::Row)
        .collect();
    for i in 0..n {
        if prob.lb[i] > f64::NEG_INFINITY {
            constraints.push(Constraint::Lower(i));
        }
        if prob.ub[i] < f64::INFINITY {
            constraints.push(Constraint::Upper(i));
        }
    }
    if let Some(i) = (0..m).find(|&i| prob.b[i] == f64::NEG_INFINITY) {
        return Ok(infeasible_solution(prob, z, i, regularized));
    }

    let mut ws = Workspace {
        prob,
        n,
        j: j_mat.as_slice().to_vec(),
        r: vec![0.0; n * n],
        r_norm: 1.0,
        active: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
    };
    let mut is_active = vec![false; constraints.len()];
    let mut active_idx: Vec<usize> = Vec::with_capacity(n);

    let max_iter = settings.max_iter.unwrap_or(10 * (n + m) + 100);
    let tol = settings.feasibility_tol;
    let mut iterations = 0;
    let mut d = vec![0.0; n];
    let mut step = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut status = QpStatus::Optimal;

    'outer: loop {
        // Most violated inactive constraint.
        let z_slice = z.as_slice();
        let mut worst = None;
        let mut worst_slack = 0.0;
        for (ci, &c) in constraints.iter().enumerate() {
            if is_active[ci] {
                continue;
            }
            let s = ws.slack(c, z_slice);
            let scale = 1.0 + bound_magnitude(prob, c);
            if s < -tol * scale && s < worst_slack {
                worst_slack = s;
                worst = Some(ci);
            }
        }
        let Some(p_idx) = worst else {
            break;
        };
        let p = constraints[p_idx];
        let mut slack_p = worst_slack;
        let mut u_plus = 0.0;

        loop {
            if iterations >= max_iter {
                status = QpStatus::MaxIter;
                break 'outer;
            }
            iterations += 1;

            ws.jt_normal(p, &mut d);
            ws.directions(&d, &mut step, &mut r);
            let iq = ws.active.len();

            // Largest dual step keeping active multipliers non-negative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for k in 0..iq {
                if r[k] > 0.0 {
                    let ratio = ws.u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(k);
                    }
                }
            }
            // Full primal step onto constraint p. `n_p^T step = |d_2|^2`, so the
            // normal is dependent on the active set when that is negligible.
            let d_all: f64 = d.iter().map(|v| v * v).sum();
            let d_free: f64 = d[iq..].iter().map(|v| v * v).sum();
            let t2 = if d_free > DEPENDENCE_TOL * d_all {
                -slack_p / ws.normal_dot(p, &step)
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);

            if t.is_infinite() {
                status = QpStatus::Infeasible;
                break 'outer;
            }

            if t2.is_infinite() {
                // Dual step only.
                for k in 0..iq {
                    ws.u[k] -= t * r[k];
                }
                u_plus += t;
                let l = drop.expect("finite dual step has a blocking constraint");
                let removed = active_idx.remove(l);
                is_active[removed] = false;
                ws.delete_constraint(l);
                continue;
            }

            for (zi, si) in z.iter_mut().zip(&step) {
                *zi += t * si;
            }
            for k in 0..iq {
                ws.u[k] -= t * r[k];
            }
            u_plus += t;

            if t == t2 {
                if !ws.add_constraint(&mut d) {
                    status = QpStatus::Infeasible;
                    break 'outer;
                }
                ws.active.push(p);
                ws.u.push(u_plus);
                active_idx.push(p_idx);
                is_active[p_idx] = true;
                continue 'outer;
            }

            let l = drop.expect("partial step has a blocking constraint");
            let removed = active_idx.remove(l);
            is_active[removed] = false;
            ws.delete_constraint(l);
            slack_p = ws.slack(p, z.as_slice());
        }
    }

    let mut row_duals = DVector::zeros(m);
    let mut bound_duals = DVector::zeros(n);
    for (c, &u) in ws.active.iter().zip(&ws.u) {
        match *c {
            Constraint::Row(i) => row_duals[i] = u,
            Constraint::Lower(i) => bound_duals[i] = -u,
            Constraint::Upper(i) => bound_duals[i] = u,
        }
    }
    let kkt = kkt_residuals(prob, &z, &row_duals, &bound_duals);
    Ok(QpSolution {
        objective: prob.objective(&z),
        z,
        status,
        row_duals,
        bound_duals,
        kkt,
        iterations,
        regularized,
    })
}

fn bound_magnitude(prob: &QpProblem, c: Constraint) -> f64 {
    match c {
        Constraint::Row(i) => prob.b[i].abs(),
        Constraint::Lower(i) => prob.lb[i].abs(),
        Constraint::Upper(i) => prob.ub[i].abs(),
    }
}

fn factorize(p: &DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, bool)> {
    let n = p.nrows();
    let shifted = p - DMatrix::identity(n, n) * MIN_EIGEN;
    if shifted.cholesky().is_some() {
        if let Some(c) = p.clone().cholesky() {
            return Ok((c, false));
        }
    }
    let reg = p + DMatrix::identity(n, n) * REGULARIZATION;
    reg.cholesky()
        .map(|c| (c, true))
        .ok_or_else(|| Error::Argument("cost Hessian is not positive semidefinite".into()))
}

fn infeasible_solution(prob: &QpProblem, z: DVector<f64>, _row: usize, regularized: bool) -> QpSolution {
    let (n, m) = (prob.n(), prob.m());
    QpSolution {
        objective: prob.objective(&z),
        kkt: kkt_residuals(prob, &z, &DVector::zeros(m), &DVector::zeros(n)),
        z,
        status: QpStatus::Infeasible,
        row_duals: DVector::zeros(m),
        bound_duals: DVector::zeros(n),
        iterations: 0,
        regularized,
    }
}

/// Residuals of the KKT system at `(z, lambda, mu)` against the original `P`.
pub fn kkt_residuals(
    prob: &QpProblem,
    z: &DVector<f64>,
    row_duals: &DVector<f64>,
    bound_duals: &DVector<f64>,
) -> KktResiduals {
    let grad = &prob.p * z + &prob.q + prob.a.tr_mul(row_duals) + bound_duals;
    let row_slack = &prob.a * z - &prob.b;
    let mut comp = 0.0_f64;
    for i in 0..prob.m() {
        if row_duals[i] != 0.0 {
            comp = comp.max((row_duals[i] * row_slack[i]).abs());
        }
    }
    for i in 0..prob.n() {
        let mu = bound_duals[i];
        if mu > 0.0 {
            comp = comp.max((mu * (z[i] - prob.ub[i])).abs());
        } else if mu < 0.0 {
            comp = comp.max((mu * (prob.lb[i] - z[i])).abs());
        }
    }
    KktResiduals {
        stationarity: grad.amax(),
        primal: prob.max_violation(z),
        complementarity: comp,
    }
}
