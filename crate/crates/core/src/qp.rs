//! Dense strictly convex QP: minimize `½ xᵀHx + fᵀx` subject to `W x ≤ w`.
//!
//! Solved with the Goldfarb–Idnani dual active-set method. It starts at the
//! unconstrained minimizer and adds violated rows one at a time while keeping
//! the multipliers of the active rows nonnegative, so every iterate is dual
//! feasible and the final active set carries an exact KKT certificate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::vfi::ConstraintRow;

/// Primal feasibility, stationarity and complementarity tolerance.
pub const KKT_TOLERANCE: f64 = 1e-8;

/// Rows violated by less than this are treated as satisfied.
const VIOLATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("hessian is not symmetric")]
    NotSymmetric,
    #[error("hessian is not positive definite")]
    IllConditioned,
    #[error("constraints are infeasible (row {row})")]
    Infeasible { row: usize },
    #[error("no convergence after {0} iterations")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        constraints: DMatrix<f64>,
        bounds: DVector<f64>,
    ) -> Result<Self, QpError> {
        let p = Self { hessian, linear, constraints, bounds };
        p.check()?;
        Ok(p)
    }

    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self, QpError> {
        let n = linear.len();
        Self::new(hessian, linear, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn rows(&self) -> usize {
        self.bounds.len()
    }

    fn check(&self) -> Result<(), QpError> {
        let n = self.linear.len();
        if self.hessian.shape() != (n, n) {
            return Err(QpError::DimensionMismatch(format!("hessian is {:?}, expected {n}×{n}", self.hessian.shape())));
        }
        if self.constraints.ncols() != n || self.constraints.nrows() != self.bounds.len() {
            return Err(QpError::DimensionMismatch(format!(
                "constraints are {:?} with {} bounds for {n} variables",
                self.constraints.shape(),
                self.bounds.len()
            )));
        }
        let scale = self.hessian.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.hessian[(i, j)] - self.hessian[(j, i)]).abs() > 1e-10 * scale {
                    return Err(QpError::NotSymmetric);
                }
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }
}

/// Per-condition KKT residuals; all are absolute.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Residuals of `Hx + f + Wᵀμ = 0`, `Wx ≤ w`, `μ ≥ 0`, `μᵢ(Wx − w)ᵢ = 0`.
pub fn kkt_residual(p: &QpProblem, x: &DVector<f64>, multipliers: &DVector<f64>) -> KktReport {
    let grad = &p.hessian * x + &p.linear + p.constraints.transpose() * multipliers;
    let slack = &p.constraints * x - &p.bounds;
    KktReport {
        stationarity: grad.amax(),
        primal: slack.iter().fold(0.0f64, |m, s| m.max(*s)),
        dual: multipliers.iter().fold(0.0f64, |m, u| m.max(-u)),
        complementarity: slack.iter().zip(multipliers.iter()).fold(0.0f64, |m, (s, u)| m.max((s * u).abs())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Active rows in the order they were added.
    pub active_set: Vec<usize>,
    /// One multiplier per row; zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub kkt: KktReport,
    pub iterations: usize,
}

impl QpSolution {
    pub fn kkt_residual(&self) -> f64 {
        self.kkt.max()
    }
}

/// Solver holding the previous active set as a warm-start hint.
///
/// The hint only changes which violated row enters first; the minimizer is
/// unique, so warm and cold solves agree up to rounding.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    previous_active: Vec<usize>,
}

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.previous_active.clear();
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution, QpError> {
        let hint = std::mem::take(&mut self.previous_active);
        let out = solve_with_hint(p, &hint);
        if let Ok(sol) = &out {
            self.previous_active = sol.active_set.clone();
        }
        out
    }
}

/// Cold solve without warm-start state.
pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    solve_with_hint(p, &[])
}

fn cholesky(h: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, QpError> {
    let chol = Cholesky::new(h.clone()).ok_or(QpError::IllConditioned)?;
    let l = chol.l_dirty();
    let diag = l.diagonal();
    let max = diag.amax();
    if diag.iter().any(|d| d.is_nan() || *d <= 1e-10 * max.max(1e-300)) {
        return Err(QpError::IllConditioned);
    }
    Ok(chol)
}

fn solve_with_hint(p: &QpProblem, hint: &[usize]) -> Result<QpSolution, QpError> {
    p.check()?;
    let n = p.dim();
    let m = p.rows();
    let chol = cholesky(&p.hessian)?;
    let l = chol.l();

    // Rows in "≥" form: c_i = −W_iᵀ, c_iᵀx ≥ −w_i.
    let mut x = -chol.solve(&p.linear);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_hint = vec![false; m];
    for &i in hint {
        if i < m {
            in_hint[i] = true;
        }
    }

    let max_iter = 10 * (n + m) + 50;
    let mut iterations = 0;
    let mut is_active = vec![false; m];

    loop {
        // Step 1: choose the entering row.
        let mut pick: Option<(usize, f64)> = None;
        let mut pick_hint: Option<(usize, f64)> = None;
        for i in 0..m {
            if is_active[i] {
                continue;
            }
            let viol = p.constraints.row(i).dot(&x.transpose()) - p.bounds[i];
            if viol > VIOLATION_TOLERANCE * (1.0 + p.bounds[i].abs()) {
                if pick.is_none_or(|(_, v)| viol > v) {
                    pick = Some((i, viol));
                }
                if in_hint[i] && pick_hint.is_none_or(|(_, v)| viol > v) {
                    pick_hint = Some((i, viol));
                }
            }
        }
        let Some((row, _)) = pick_hint.or(pick) else {
            break;
        };

        let c_p: DVector<f64> = -p.constraints.row(row).transpose();
        let b_p = -p.bounds[row];
        let mut u_p = 0.0;

        // Step 2: move until `row` is satisfied, dropping blocking rows.
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit(iterations));
            }
            let (z, r) = step_directions(&l, p, &active, &c_p);
            let zc = z.dot(&c_p);
            let full = if zc > 1e-14 * c_p.norm_squared().max(1e-300) { Some((b_p - c_p.dot(&x)) / zc) } else { None };
            let mut partial: Option<(usize, f64)> = None;
            for (k, rk) in r.iter().enumerate() {
                if *rk > 0.0 {
                    let t = u[k] / rk;
                    if partial.is_none_or(|(_, best)| t < best) {
                        partial = Some((k, t));
                    }
                }
            }
            match (full, partial) {
                (None, None) => return Err(QpError::Infeasible { row }),
                (None, Some((k, t))) => {
                    update_multipliers(&mut u, &r, t);
                    u_p += t;
                    drop_row(&mut active, &mut u, &mut is_active, k);
                }
                (Some(t2), partial) => {
                    let t1 = partial.map_or(f64::INFINITY, |(_, t)| t);
                    let t = t1.min(t2);
                    x += &z * t;
                    update_multipliers(&mut u, &r, t);
                    u_p += t;
                    if t2 <= t1 {
                        active.push(row);
                        u.push(u_p);
                        is_active[row] = true;
                        break;
                    }
                    let (k, _) = partial.expect("partial step exists when t1 < t2");
                    drop_row(&mut active, &mut u, &mut is_active, k);
                }
            }
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        multipliers[i] = u[k].max(0.0);
    }
    let kkt = kkt_residual(p, &x, &multipliers);
    Ok(QpSolution { x, active_set: active, multipliers, kkt, iterations })
}

fn update_multipliers(u: &mut [f64], r: &DVector<f64>, t: f64) {
    for (uk, rk) in u.iter_mut().zip(r.iter()) {
        *uk -= t * rk;
    }
}

fn drop_row(active: &mut Vec<usize>, u: &mut Vec<f64>, is_active: &mut [bool], k: usize) {
    is_active[active[k]] = false;
    active.remove(k);
    u.remove(k);
}

/// Primal direction `z` and dual direction `r` for entering normal `c_p`.
///
/// With `H = LLᵀ`, `M = L⁻¹N` and `v = L⁻¹c_p`: `r` is the least-squares
/// solution of `M r ≈ v` and `z = L⁻ᵀ(v − M r)`.
fn step_directions(
    l: &DMatrix<f64>,
    p: &QpProblem,
    active: &[usize],
    c_p: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = p.dim();
    let v = l.solve_lower_triangular(c_p).expect("cholesky factor is nonsingular");
    if active.is_empty() {
        let z = l.transpose().solve_upper_triangular(&v).expect("cholesky factor is nonsingular");
        return (z, DVector::zeros(0));
    }
    let mut normals = DMatrix::zeros(n, active.len());
    for (k, &i) in active.iter().enumerate() {
        normals.set_column(k, &(-p.constraints.row(i).transpose()));
    }
    let m = l.solve_lower_triangular(&normals).expect("cholesky factor is nonsingular");
    let qr = m.qr();
    let q = qr.q();
    let rr = qr.r();
    let qtv = q.transpose() * &v;
    let r = rr.solve_upper_triangular(&qtv).unwrap_or_else(|| DVector::zeros(active.len()));
    let resid = &v - &q * &qtv;
    let z = l.transpose().solve_upper_triangular(&resid).expect("cholesky factor is nonsingular");
    (z, r)
}

/// One task block: Jacobian and error, both in the task's own rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBlock {
    pub jacobian: DMatrix<f64>,
    pub error: DVector<f64>,
}

/// `H = 2(AᵀA + λI)`, `f = 2η Aᵀỹ` with `A = blockdiag(J_i)` and `ỹ` the
/// stacked errors; rows are stacked into `W ġ ≤ w`.
pub fn build_problem(tasks: &[TaskBlock], eta: f64, lambda: f64, rows: &[ConstraintRow]) -> Result<QpProblem, QpError> {
    let n: usize = tasks.iter().map(|t| t.jacobian.ncols()).sum();
    let mut h = DMatrix::zeros(n, n);
    let mut f = DVector::zeros(n);
    let mut offset = 0;
    for t in tasks {
        if t.jacobian.nrows() != t.error.len() {
            return Err(QpError::DimensionMismatch(format!(
                "task jacobian has {} rows, error has {}",
                t.jacobian.nrows(),
                t.error.len()
            )));
        }
        let k = t.jacobian.ncols();
        let jt = t.jacobian.transpose();
        h.view_mut((offset, offset), (k, k)).copy_from(&(2.0 * &jt * &t.jacobian));
        f.rows_mut(offset, k).copy_from(&(2.0 * eta * &jt * &t.error));
        offset += k;
    }
    for i in 0..n {
        h[(i, i)] += 2.0 * lambda;
    }
    let mut w_mat = DMatrix::zeros(rows.len(), n);
    let mut w = DVector::zeros(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.width() != n {
            return Err(QpError::DimensionMismatch(format!("row {i} has width {}, expected {n}", r.width())));
        }
        w_mat.set_row(i, &r.coeffs);
        w[i] = r.bound;
    }
    QpProblem::new(h, f, w_mat, w)
}
