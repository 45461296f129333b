//! Linear programs `min c'z s.t. Az <= b (or = b), z >= 0 (optional)`,
//! solved by a dense revised simplex with Bland's rule.
//!
//! Instances are converted to standard form once, and phase I runs once at
//! construction. Each solve then starts phase II from the stored feasible
//! basis, so solving a batch of cost vectors costs only phase II pivots.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_len, dot, DecisionOracle, DecisionVector, SolveStatus};
use crate::prob::Seed;
use crate::{Error, Result, FEASIBILITY_TOL};

const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
const RANDOM_LP_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `A z <= b`
    Le,
    /// `A z = b`
    Eq,
}

/// Standard form `min s'x, S x = r, x >= 0, r >= 0`.
///
/// Column layout: `z` (n), then `z-` for free variables (n or 0), then
/// slacks (m or 0), then artificials. Only the columns before `n_real` may
/// ever enter the basis.
#[derive(Debug, Clone)]
struct StandardForm {
    n: usize,
    free: bool,
    s: DMatrix<f64>,
    r: Vec<f64>,
    n_real: usize,
}

impl StandardForm {
    fn rows(&self) -> usize {
        self.s.nrows()
    }

    fn cols(&self) -> usize {
        self.s.ncols()
    }

    fn cost(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        out[..self.n].copy_from_slice(c);
        if self.free {
            for j in 0..self.n {
                out[self.n + j] = -c[j];
            }
        }
        out
    }

    fn decision(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| if self.free { x[j] - x[self.n + j] } else { x[j] })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Basis {
    vars: Vec<usize>,
    is_basic: Vec<bool>,
    binv: DMatrix<f64>,
    xb: Vec<f64>,
}

impl Basis {
    fn refactor(&mut self, sf: &StandardForm) -> Result<()> {
        let m = sf.rows();
        let b = DMatrix::from_fn(m, m, |i, k| sf.s[(i, self.vars[k])]);
        self.binv = b.try_inverse().ok_or(Error::Singular)?;
        let x = &self.binv * nalgebra::DVector::from_column_slice(&sf.r);
        for (dst, v) in self.xb.iter_mut().zip(x.iter()) {
            *dst = if *v < 0.0 && *v > -1e-11 { 0.0 } else { *v };
        }
        Ok(())
    }

    /// Pivots column `enter` into row `row` given `u = B^-1 S_enter`.
    fn pivot(&mut self, row: usize, enter: usize, u: &[f64]) {
        let m = self.vars.len();
        let theta = self.xb[row] / u[row];
        for i in 0..m {
            if i == row {
                self.xb[i] = theta;
            } else {
                let v = self.xb[i] - theta * u[i];
                self.xb[i] = if v < 0.0 && v > -1e-11 { 0.0 } else { v };
            }
        }
        let inv = 1.0 / u[row];
        for k in 0..m {
            self.binv[(row, k)] *= inv;
        }
        for i in 0..m {
            if i == row || u[i] == 0.0 {
                continue;
            }
            let f = u[i];
            for k in 0..m {
                let v = self.binv[(row, k)];
                self.binv[(i, k)] -= f * v;
            }
        }
        self.is_basic[self.vars[row]] = false;
        self.is_basic[enter] = true;
        self.vars[row] = enter;
    }

    fn column(&self, sf: &StandardForm, j: usize, out: &mut [f64]) {
        let m = sf.rows();
        let col = sf.s.column(j);
        for i in 0..m {
            let mut v = 0.0;
            for k in 0..m {
                v += self.binv[(i, k)] * col[k];
            }
            out[i] = v;
        }
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.vars.len();
        (0..m)
            .map(|k| (0..m).map(|i| cost[self.vars[i]] * self.binv[(i, k)]).sum())
            .collect()
    }
}

enum Outcome {
    Optimal { tie: bool },
    Unbounded,
}

/// Runs primal simplex with Bland's rule from a feasible basis.
fn simplex(sf: &StandardForm, cost: &[f64], basis: &mut Basis) -> Result<Outcome> {
    let m = sf.rows();
    let scale = cost.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let opt_tol = 1e-9 * scale;
    let max_iter = 10_000 + 50 * (m + sf.cols());
    let mut u = vec![0.0; m];
    for iter in 0..max_iter {
        if iter > 0 && iter % REFACTOR_EVERY == 0 {
            basis.refactor(sf)?;
        }
        let y = basis.duals(cost);
        let mut enter = None;
        let mut tie = false;
        for j in 0..sf.n_real {
            if basis.is_basic[j] {
                continue;
            }
            let d = cost[j] - dot(&y, sf.s.column(j).as_slice());
            if d < -opt_tol {
                enter = Some(j);
                break;
            }
            if d.abs() <= opt_tol {
                tie = true;
            }
        }
        let Some(enter) = enter else {
            return Ok(Outcome::Optimal { tie });
        };
        basis.column(sf, enter, &mut u);
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if u[i] <= PIVOT_TOL {
                continue;
            }
            let ratio = basis.xb[i].max(0.0) / u[i];
            leave = match leave {
                None => Some((i, ratio)),
                Some((r, best)) => {
                    let slack = 1e-12 * best.abs().max(1.0);
                    if ratio < best - slack
                        || (ratio <= best + slack && basis.vars[i] < basis.vars[r])
                    {
                        Some((i, ratio))
                    } else {
                        Some((r, best))
                    }
                }
            };
        }
        let Some((row, _)) = leave else {
            return Ok(Outcome::Unbounded);
        };
        basis.pivot(row, enter, &u);
    }
    Err(Error::IterationLimit(max_iter))
}

/// Feasible polyhedron `{z : Az <= b (or = b), z >= 0 if nonneg}`.
///
/// Construction checks that the region is nonempty and bounded, so solving
/// never reports `Unbounded` or `Infeasible` on a validated instance.
#[derive(Debug, Clone)]
pub struct LpInstance {
    a: DMatrix<f64>,
    b: Vec<f64>,
    kind: ConstraintKind,
    nonneg: bool,
    sf: StandardForm,
    start: Basis,
}

impl LpInstance {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>, kind: ConstraintKind, nonneg: bool) -> Result<Self> {
        let lp = Self::new_unchecked(a, b, kind, nonneg)?;
        lp.check_bounded()?;
        Ok(lp)
    }

    /// Like [`LpInstance::new`] but skips the boundedness check; solves may
    /// then return [`Error::Unbounded`].
    pub fn new_unchecked(
        a: DMatrix<f64>,
        b: Vec<f64>,
        kind: ConstraintKind,
        nonneg: bool,
    ) -> Result<Self> {
        let (m, n) = a.shape();
        if b.len() != m {
            return Err(Error::dim(format!("A is {m}x{n} but b has {}", b.len())));
        }
        if n == 0 {
            return Err(Error::dim("LP needs at least one variable"));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("A and b must be finite"));
        }
        let free = !nonneg;
        let n_struct = if free { 2 * n } else { n };
        let n_slack = if kind == ConstraintKind::Le { m } else { 0 };
        let needs_art: Vec<bool> = (0..m)
            .map(|i| kind == ConstraintKind::Eq || b[i] < 0.0)
            .collect();
        let n_art = needs_art.iter().filter(|&&x| x).count();
        let n_real = n_struct + n_slack;
        let mut s = DMatrix::zeros(m, n_real + n_art);
        let mut r = vec![0.0; m];
        let mut vars = vec![0; m];
        let mut art = n_real;
        for i in 0..m {
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            r[i] = sign * b[i];
            for j in 0..n {
                s[(i, j)] = sign * a[(i, j)];
                if free {
                    s[(i, n + j)] = -sign * a[(i, j)];
                }
            }
            if n_slack > 0 {
                s[(i, n_struct + i)] = sign;
            }
            if needs_art[i] {
                s[(i, art)] = 1.0;
                vars[i] = art;
                art += 1;
            } else {
                vars[i] = n_struct + i;
            }
        }
        let sf = StandardForm {
            n,
            free,
            s,
            r: r.clone(),
            n_real,
        };
        let mut is_basic = vec![false; sf.cols()];
        for &v in &vars {
            is_basic[v] = true;
        }
        let mut start = Basis {
            vars,
            is_basic,
            binv: DMatrix::identity(m, m),
            xb: r,
        };
        if n_art > 0 {
            phase_one(&sf, &mut start)?;
        }
        Ok(LpInstance {
            a,
            b,
            kind,
            nonneg,
            sf,
            start,
        })
    }

    fn check_bounded(&self) -> Result<()> {
        let n = self.n_vars();
        if self.nonneg {
            // a nonzero recession direction d >= 0 has sum(d) > 0
            self.solve_raw(&vec![-1.0; n])?;
        } else {
            let mut c = vec![0.0; n];
            for j in 0..n {
                for sign in [1.0, -1.0] {
                    c[j] = sign;
                    self.solve_raw(&c)?;
                }
                c[j] = 0.0;
            }
        }
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn nonneg(&self) -> bool {
        self.nonneg
    }

    /// Worst violation of `z` against the constraints.
    pub fn residual(&self, z: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n_constraints() {
            let lhs: f64 = (0..self.n_vars()).map(|j| self.a[(i, j)] * z[j]).sum();
            let gap = lhs - self.b[i];
            worst = worst.max(match self.kind {
                ConstraintKind::Le => gap,
                ConstraintKind::Eq => gap.abs(),
            });
        }
        if self.nonneg {
            for &v in z {
                worst = worst.max(-v);
            }
        }
        worst
    }

    fn solve_raw(&self, c: &[f64]) -> Result<DecisionVector> {
        check_len(c, self.n_vars())?;
        let cost = self.sf.cost(c);
        let mut basis = self.start.clone();
        let tie = match simplex(&self.sf, &cost, &mut basis)? {
            Outcome::Optimal { tie } => tie,
            Outcome::Unbounded => return Err(Error::Unbounded),
        };
        let mut x = vec![0.0; self.sf.cols()];
        for (i, &v) in basis.vars.iter().enumerate() {
            x[v] = basis.xb[i];
        }
        let mut z = self.sf.decision(&x);
        for v in z.iter_mut() {
            if v.abs() < 1e-13 {
                *v = 0.0;
            }
        }
        Ok(DecisionVector {
            objective: dot(c, &z),
            z,
            status: if tie {
                SolveStatus::TieBroken
            } else {
                SolveStatus::Optimal
            },
        })
    }
}

/// Minimizes the sum of artificials, then drives zero artificials out of
/// the basis. Artificials left basic sit on redundant rows at value zero.
fn phase_one(sf: &StandardForm, basis: &mut Basis) -> Result<()> {
    let cols = sf.cols();
    let mut cost = vec![0.0; cols];
    for c in cost.iter_mut().skip(sf.n_real) {
        *c = 1.0;
    }
    match simplex(sf, &cost, basis)? {
        Outcome::Optimal { .. } => {}
        Outcome::Unbounded => unreachable!("phase I objective is bounded below by zero"),
    }
    let infeas: f64 = basis
        .vars
        .iter()
        .zip(&basis.xb)
        .filter(|(v, _)| **v >= sf.n_real)
        .map(|(_, x)| *x)
        .sum();
    let scale = sf.r.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    if infeas > FEASIBILITY_TOL * scale {
        return Err(Error::Infeasible);
    }
    let m = sf.rows();
    let mut u = vec![0.0; m];
    for row in 0..m {
        if basis.vars[row] < sf.n_real {
            continue;
        }
        basis.xb[row] = 0.0;
        for j in 0..sf.n_real {
            if basis.is_basic[j] {
                continue;
            }
            let alpha: f64 = (0..m).map(|k| basis.binv[(row, k)] * sf.s[(k, j)]).sum();
            if alpha.abs() > PIVOT_TOL {
                basis.column(sf, j, &mut u);
                basis.pivot(row, j, &u);
                break;
            }
        }
    }
    basis.refactor(sf)?;
    Ok(())
}

/// Optimal vertex of `min c'z` over the instance.
pub fn solve_lp(inst: &LpInstance, c: &[f64]) -> Result<DecisionVector> {
    inst.solve_raw(c)
}

impl DecisionOracle for LpInstance {
    fn dim(&self) -> usize {
        self.n_vars()
    }

    fn solve(&self, c: &[f64]) -> Result<DecisionVector> {
        self.solve_raw(c)
    }

    fn feasibility_residual(&self, z: &[f64]) -> f64 {
        self.residual(z)
    }
}

/// Draws `A ~ N(0,1)^{d x n}`, `b = |N(0,1)| + 1` and returns the first
/// bounded polyhedron `{Az <= b, z >= 0}`, with the number of draws it took.
pub fn random_lp_with_attempts(n: usize, d: usize, seed: Seed) -> Result<(LpInstance, usize)> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("random LP needs n >= 1 and d >= 1"));
    }
    let mut rng = seed.rng();
    for attempt in 1..=RANDOM_LP_ATTEMPTS {
        // row-major draw order
        let mut a = DMatrix::zeros(d, n);
        for i in 0..d {
            for j in 0..n {
                a[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        let b: Vec<f64> = (0..d)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g.abs() + 1.0
            })
            .collect();
        match LpInstance::new(a, b, ConstraintKind::Le, true) {
            Ok(lp) => return Ok((lp, attempt)),
            Err(Error::Unbounded) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::GenerationFailed(RANDOM_LP_ATTEMPTS))
}

/// See [`random_lp_with_attempts`].
pub fn random_lp(n: usize, d: usize, seed: Seed) -> Result<LpInstance> {
    random_lp_with_attempts(n, d, seed).map(|(lp, _)| lp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex_lp() -> LpInstance {
        LpInstance::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            vec![1.0],
            ConstraintKind::Le,
            true,
        )
        .unwrap()
    }

    #[test]
    fn origin_for_nonnegative_costs() {
        let z = solve_lp(&simplex_lp(), &[1.0, 1.0]).unwrap();
        assert_eq!(z.z, vec![0.0, 0.0]);
        assert_eq!(z.objective, 0.0);
        assert_eq!(z.status, SolveStatus::Optimal);
    }

    #[test]
    fn picks_best_vertex() {
        let z = solve_lp(&simplex_lp(), &[-1.0, -2.0]).unwrap();
        assert_eq!(z.z, vec![0.0, 1.0]);
        assert_eq!(z.objective, -2.0);
    }

    #[test]
    fn tie_is_deterministic() {
        let lp = simplex_lp();
        let first = solve_lp(&lp, &[-1.0, -1.0]).unwrap();
        assert_eq!(first.objective, -1.0);
        assert!(first.z == vec![1.0, 0.0] || first.z == vec![0.0, 1.0]);
        assert_eq!(first.status, SolveStatus::TieBroken);
        for _ in 0..10 {
            assert_eq!(solve_lp(&lp, &[-1.0, -1.0]).unwrap(), first);
        }
    }

    #[test]
    fn unbounded_region_rejected() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let err = LpInstance::new(a.clone(), vec![1.0], ConstraintKind::Le, true).unwrap_err();
        assert!(matches!(err, Error::Unbounded));
        let lp = LpInstance::new_unchecked(a, vec![1.0], ConstraintKind::Le, true).unwrap();
        assert!(matches!(solve_lp(&lp, &[0.0, -1.0]), Err(Error::Unbounded)));
        assert_eq!(solve_lp(&lp, &[0.0, 1.0]).unwrap().objective, 0.0);
    }

    #[test]
    fn infeasible_region_rejected() {
        // z1 + z2 <= -1 with z >= 0
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let err = LpInstance::new(a, vec![-1.0], ConstraintKind::Le, true).unwrap_err();
        assert!(matches!(err, Error::Infeasible));
    }

    #[test]
    fn equality_with_redundant_row() {
        // z1 + z2 = 1 stated twice, plus a scaled copy
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
        let lp = LpInstance::new(a, vec![1.0, 1.0, 2.0], ConstraintKind::Eq, true).unwrap();
        let z = solve_lp(&lp, &[3.0, 1.0]).unwrap();
        assert_eq!(z.z, vec![0.0, 1.0]);
        assert!(lp.residual(&z.z) <= FEASIBILITY_TOL);
    }

    #[test]
    fn free_variables_box() {
        // -1 <= z <= 1 in two dimensions
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let lp = LpInstance::new(a, vec![1.0; 4], ConstraintKind::Le, false).unwrap();
        let z = solve_lp(&lp, &[2.0, -3.0]).unwrap();
        assert_eq!(z.z, vec![-1.0, 1.0]);
        assert_eq!(z.objective, -5.0);
    }

    #[test]
    fn random_lp_is_deterministic_and_contains_origin() {
        let a = random_lp(10, 5, Seed(3)).unwrap();
        let b = random_lp(10, 5, Seed(3)).unwrap();
        assert_eq!(a.a(), b.a());
        assert_eq!(a.b(), b.b());
        assert!(a.b().iter().all(|&v| v >= 1.0));
        assert_eq!(a.residual(&[0.0; 10]), 0.0);
    }
}
