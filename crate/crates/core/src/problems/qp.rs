//! Quadratic programs `min c'z + 1/2 z'(Q + lambda I)z`, optionally over a
//! polyhedron.
//!
//! The unconstrained minimizer is the closed form `-(Q + lambda I)^{-1} c`.
//! With constraints a primal active-set method is used; it is warm-started
//! at the unconstrained minimizer when that is feasible and at an LP vertex
//! otherwise.

use nalgebra::{DMatrix, DVector};

use super::lp::{ConstraintKind, LpInstance};
use super::{check_len, dot, DecisionOracle, DecisionVector, SolveStatus};
use crate::prob::cholesky_factor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpInstance {
    q: DMatrix<f64>,
    lambda: f64,
    constraints: Option<LpInstance>,
    hessian: DMatrix<f64>,
    /// Cholesky factor of the Hessian; `None` when it is singular.
    chol: Option<DMatrix<f64>>,
    ineq: DMatrix<f64>,
    ineq_rhs: Vec<f64>,
    eq: DMatrix<f64>,
    eq_rhs: Vec<f64>,
}

/// Lagrange multipliers of a constrained solve, ordered as in
/// [`QpInstance::inequality_rows`] and [`QpInstance::equality_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub inequality: Vec<f64>,
    pub equality: Vec<f64>,
}

impl QpInstance {
    /// `q` must be symmetric PSD and `lambda >= 0`.
    pub fn new(q: DMatrix<f64>, lambda: f64, constraints: Option<LpInstance>) -> Result<Self> {
        let n = q.nrows();
        if q.ncols() != n || n == 0 {
            return Err(Error::dim(format!("Q must be square, got {}x{}", n, q.ncols())));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Q must be finite"));
        }
        let scale = q.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                let gap = (q[(i, j)] - q[(j, i)]).abs();
                if gap > 1e-12 * scale {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
            }
        }
        let q = (&q + q.transpose()) * 0.5;
        let min_eig = q.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-10 * scale {
            return Err(Error::NotPositiveDefinite {
                index: 0,
                pivot: min_eig,
            });
        }
        if let Some(lp) = &constraints {
            if lp.n_vars() != n {
                return Err(Error::dim(format!(
                    "constraints have {} variables, Q is {n}x{n}",
                    lp.n_vars()
                )));
            }
        }
        let hessian = &q + DMatrix::identity(n, n) * lambda;
        let chol = cholesky_factor(&hessian).ok();

        let (mut g, mut h, mut e, mut f) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        if let Some(lp) = &constraints {
            for i in 0..lp.n_constraints() {
                let row: Vec<f64> = lp.a().row(i).iter().copied().collect();
                match lp.kind() {
                    ConstraintKind::Le => {
                        g.push(row);
                        h.push(lp.b()[i]);
                    }
                    ConstraintKind::Eq => {
                        e.push(row);
                        f.push(lp.b()[i]);
                    }
                }
            }
            if lp.nonneg() {
                for j in 0..n {
                    let mut row = vec![0.0; n];
                    row[j] = -1.0;
                    g.push(row);
                    h.push(0.0);
                }
            }
        }
        let stack = |rows: &[Vec<f64>]| DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Ok(QpInstance {
            ineq: stack(&g),
            ineq_rhs: h,
            eq: stack(&e),
            eq_rhs: f,
            q,
            lambda,
            constraints,
            hessian,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn constraints(&self) -> Option<&LpInstance> {
        self.constraints.as_ref()
    }

    /// `Q + lambda I`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// Inequality rows `G z <= h`, including `-z <= 0` for nonnegativity.
    pub fn inequality_rows(&self) -> (&DMatrix<f64>, &[f64]) {
        (&self.ineq, &self.ineq_rhs)
    }

    pub fn equality_rows(&self) -> (&DMatrix<f64>, &[f64]) {
        (&self.eq, &self.eq_rhs)
    }

    /// Solves `(Q + lambda I) x = rhs`.
    pub fn solve_hessian(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let l = self.chol.as_ref().ok_or(Error::Singular)?;
        Ok(chol_solve(l, rhs))
    }

    /// `(Q + lambda I)^{-1}`.
    pub fn inverse_hessian(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut k = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve_hessian(&e)?;
            e[j] = 0.0;
            k.set_column(j, &DVector::from_vec(col));
        }
        Ok((&k + k.transpose()) * 0.5)
    }

    fn objective(&self, c: &[f64], z: &[f64]) -> f64 {
        let hz = &self.hessian * DVector::from_column_slice(z);
        dot(c, z) + 0.5 * dot(z, hz.as_slice())
    }

    pub fn residual(&self, z: &[f64]) -> f64 {
        self.constraints.as_ref().map_or(0.0, |lp| lp.residual(z))
    }
}

fn chol_solve(l: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut y = rhs.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Closed-form minimizer `-(Q + lambda I)^{-1} c`.
pub fn solve_qp_unconstrained(inst: &QpInstance, c: &[f64]) -> Result<DecisionVector> {
    check_len(c, inst.dim())?;
    let mut z = inst.solve_hessian(c)?;
    z.iter_mut().for_each(|v| *v = -*v);
    Ok(DecisionVector {
        objective: inst.objective(c, &z),
        z,
        status: SolveStatus::Optimal,
    })
}

/// Active-set solve over the instance's polyhedron.
pub fn solve_qp_constrained(inst: &QpInstance, c: &[f64]) -> Result<DecisionVector> {
    solve_qp_constrained_with_multipliers(inst, c).map(|(z, _)| z)
}

/// Indices of rows that are linearly independent, scanning in order.
struct RowSpan {
    basis: Vec<Vec<f64>>,
}

impl RowSpan {
    fn new() -> Self {
        RowSpan { basis: Vec::new() }
    }

    /// Adds `row` if it is independent of the rows added so far.
    fn try_add(&mut self, row: &[f64]) -> bool {
        let norm = dot(row, row).sqrt();
        if norm == 0.0 {
            return false;
        }
        let mut r = row.to_vec();
        // two passes of Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &self.basis {
                let p = dot(&r, q);
                r.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
            }
        }
        let rn = dot(&r, &r).sqrt();
        if rn <= 1e-9 * norm {
            return false;
        }
        r.iter_mut().for_each(|v| *v /= rn);
        self.basis.push(r);
        true
    }
}

/// Active-set solve that also returns the KKT multipliers.
pub fn solve_qp_constrained_with_multipliers(
    inst: &QpInstance,
    c: &[f64],
) -> Result<(DecisionVector, Multipliers)> {
    let n = inst.dim();
    check_len(c, n)?;
    let Some(lp) = inst.constraints.as_ref() else {
        let z = solve_qp_unconstrained(inst, c)?;
        let mult = Multipliers {
            inequality: Vec::new(),
            equality: Vec::new(),
        };
        return Ok((z, mult));
    };
    if inst.chol.is_none() {
        return Err(Error::Singular);
    }
    let (g, h) = (&inst.ineq, &inst.ineq_rhs);
    let e = &inst.eq;
    let m_in = g.nrows();
    let row_of = |k: usize| -> Vec<f64> {
        if k < m_in {
            g.row(k).iter().copied().collect()
        } else {
            e.row(k - m_in).iter().copied().collect()
        }
    };
    let slack = |k: usize, z: &[f64]| -> f64 {
        h[k] - (0..n).map(|j| g[(k, j)] * z[j]).sum::<f64>()
    };

    let unconstrained = solve_qp_unconstrained(inst, c)?.z;
    let mut z = if e.nrows() == 0 && inst.residual(&unconstrained) <= 0.0 {
        unconstrained
    } else {
        super::lp::solve_lp(lp, c)?.z
    };

    // working set: rows k < m_in are inequalities, k >= m_in equalities
    let mut span = RowSpan::new();
    let mut work: Vec<usize> = Vec::new();
    for k in 0..e.nrows() {
        if span.try_add(&row_of(m_in + k)) {
            work.push(m_in + k);
        }
    }
    for k in 0..m_in {
        let scale = 1.0 + h[k].abs();
        if slack(k, &z).abs() <= 1e-9 * scale && span.try_add(&row_of(k)) {
            work.push(k);
        }
    }

    let max_iter = 1000 + 50 * (n + m_in);
    // after an unblocked full step z minimizes over the working set, and a
    // fresh step would only be rounding noise
    let mut at_subproblem_min = false;
    for _ in 0..max_iter {
        let w = work.len();
        let grad = &inst.hessian * DVector::from_column_slice(&z) + DVector::from_column_slice(c);
        let dim = n + w;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&inst.hessian);
        for (r, &k) in work.iter().enumerate() {
            let row = row_of(k);
            for j in 0..n {
                kkt[(n + r, j)] = row[j];
                kkt[(j, n + r)] = row[j];
            }
        }
        let mut rhs = DVector::zeros(dim);
        for j in 0..n {
            rhs[j] = -grad[j];
        }
        let sol = kkt.lu().solve(&rhs).ok_or(Error::Singular)?;
        let p: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let p_norm = p.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let z_norm = z.iter().fold(1.0_f64, |a, v| a.max(v.abs()));

        if at_subproblem_min || work.len() == n || p_norm <= 1e-12 * z_norm {
            at_subproblem_min = false;
            // multipliers of the working set
            let nu: Vec<f64> = sol.rows(n, w).iter().copied().collect();
            let gscale = grad.amax().max(1.0);
            let mut drop: Option<(usize, f64)> = None;
            for (r, &k) in work.iter().enumerate() {
                if k < m_in && nu[r] < -1e-10 * gscale {
                    if drop.is_none_or(|(_, v)| nu[r] < v) {
                        drop = Some((r, nu[r]));
                    }
                }
            }
            match drop {
                Some((r, _)) => {
                    work.remove(r);
                }
                None => {
                    let mut mult = Multipliers {
                        inequality: vec![0.0; m_in],
                        equality: vec![0.0; e.nrows()],
                    };
                    for (r, &k) in work.iter().enumerate() {
                        if k < m_in {
                            mult.inequality[k] = nu[r].max(0.0);
                        } else {
                            mult.equality[k - m_in] = nu[r];
                        }
                    }
                    let dv = DecisionVector {
                        objective: inst.objective(c, &z),
                        z,
                        status: SolveStatus::Optimal,
                    };
                    return Ok((dv, mult));
                }
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut block = None;
        for k in 0..m_in {
            if work.contains(&k) {
                continue;
            }
            let gp: f64 = (0..n).map(|j| g[(k, j)] * p[j]).sum();
            if gp <= 1e-14 * p_norm {
                continue;
            }
            let step = slack(k, &z).max(0.0) / gp;
            if step < alpha {
                alpha = step;
                block = Some(k);
            }
        }
        for j in 0..n {
            z[j] += alpha * p[j];
        }
        match block {
            Some(k) => work.push(k),
            None => at_subproblem_min = true,
        }
    }
    Err(Error::IterationLimit(max_iter))
}

impl DecisionOracle for QpInstance {
    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn solve(&self, c: &[f64]) -> Result<DecisionVector> {
        if self.constraints.is_some() {
            solve_qp_constrained(self, c)
        } else {
            solve_qp_unconstrained(self, c)
        }
    }

    fn feasibility_residual(&self, z: &[f64]) -> f64 {
        self.residual(z)
    }
}

/// Polyhedron `lo <= z <= hi`.
pub fn box_constraints(lo: &[f64], hi: &[f64]) -> Result<LpInstance> {
    let n = lo.len();
    if hi.len() != n {
        return Err(Error::dim("box bounds have different lengths"));
    }
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return Err(Error::Infeasible);
    }
    let mut a = DMatrix::zeros(2 * n, n);
    let mut b = vec![0.0; 2 * n];
    for j in 0..n {
        a[(2 * j, j)] = 1.0;
        b[2 * j] = hi[j];
        a[(2 * j + 1, j)] = -1.0;
        b[2 * j + 1] = -lo[j];
    }
    LpInstance::new(a, b, ConstraintKind::Le, false)
}
