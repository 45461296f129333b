//! Problem instances and exact solvers.
//!
//! Every solver follows the minimization convention `pi(c) in argmin c'z`
//! (plus a fixed quadratic term for QPs). Knapsack is a maximization problem
//! at heart, so its [`DecisionOracle`] impl maximizes the values `-c`.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub mod grid;
pub mod knapsack;
pub mod lp;
pub mod qp;

pub use grid::{build_grid_lp, GridFlowInstance};
pub use knapsack::{solve_knapsack, KnapsackInstance};
pub use lp::{random_lp, solve_lp, ConstraintKind, LpInstance};
pub use qp::{box_constraints, solve_qp_constrained, solve_qp_unconstrained, QpInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Optimal, but another optimum exists; the reported one is chosen by a
    /// deterministic rule.
    TieBroken,
}

/// A solver's answer: the decision, its objective and how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    pub z: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
}

/// Anything that maps a cost vector to an optimal decision.
pub trait DecisionOracle: Sync {
    /// Length of both cost and decision vectors.
    fn dim(&self) -> usize;

    fn solve(&self, c: &[f64]) -> Result<DecisionVector>;

    /// Worst constraint violation of `z`; zero when feasible.
    fn feasibility_residual(&self, z: &[f64]) -> f64;
}

impl<T: DecisionOracle + ?Sized> DecisionOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn solve(&self, c: &[f64]) -> Result<DecisionVector> {
        (**self).solve(c)
    }
    fn feasibility_residual(&self, z: &[f64]) -> f64 {
        (**self).feasibility_residual(z)
    }
}

impl<T: DecisionOracle + ?Sized + Send> DecisionOracle for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn solve(&self, c: &[f64]) -> Result<DecisionVector> {
        (**self).solve(c)
    }
    fn feasibility_residual(&self, z: &[f64]) -> f64 {
        (**self).feasibility_residual(z)
    }
}

/// Wraps an oracle and counts calls to `solve`.
pub struct CountingOracle<O> {
    inner: O,
    calls: AtomicUsize,
}

impl<O: DecisionOracle> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: DecisionOracle> DecisionOracle for CountingOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn solve(&self, c: &[f64]) -> Result<DecisionVector> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.solve(c)
    }
    fn feasibility_residual(&self, z: &[f64]) -> f64 {
        self.inner.feasibility_residual(z)
    }
}

pub(crate) fn check_len(c: &[f64], n: usize) -> Result<()> {
    if c.len() != n {
        return Err(Error::dim(format!(
            "cost vector has length {}, expected {n}",
            c.len()
        )));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cost vector has non-finite entries"));
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemType {
    Lp,
    Qp,
    Knapsack,
    Grid,
}

/// JSON form of an instance, used for replay and bug reports.
///
/// Only the fields relevant to `type` are read. `A` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(rename = "type")]
    pub kind: ProblemType,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    /// `z >= 0`; defaults to true.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonneg: Option<bool>,
    /// Constraints are `A z = b` rather than `A z <= b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equality: Option<bool>,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Schema(format!("{what} rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl ProblemSpec {
    fn empty(kind: ProblemType) -> Self {
        ProblemSpec {
            kind,
            a: None,
            b: None,
            q: None,
            lambda: None,
            weights: None,
            capacity: None,
            rows: None,
            cols: None,
            nonneg: None,
            equality: None,
        }
    }

    pub fn from_lp(lp: &LpInstance) -> Self {
        ProblemSpec {
            a: Some(matrix_to_rows(lp.a())),
            b: Some(lp.b().to_vec()),
            nonneg: Some(lp.nonneg()),
            equality: Some(lp.kind() == ConstraintKind::Eq),
            ..ProblemSpec::empty(ProblemType::Lp)
        }
    }

    pub fn from_qp(qp: &QpInstance) -> Self {
        let mut spec = ProblemSpec {
            q: Some(matrix_to_rows(qp.q())),
            lambda: Some(qp.lambda()),
            ..ProblemSpec::empty(ProblemType::Qp)
        };
        if let Some(lp) = qp.constraints() {
            spec.a = Some(matrix_to_rows(lp.a()));
            spec.b = Some(lp.b().to_vec());
            spec.nonneg = Some(lp.nonneg());
            spec.equality = Some(lp.kind() == ConstraintKind::Eq);
        }
        spec
    }

    pub fn from_knapsack(k: &KnapsackInstance) -> Self {
        ProblemSpec {
            weights: Some(k.weights().to_vec()),
            capacity: Some(k.capacity()),
            ..ProblemSpec::empty(ProblemType::Knapsack)
        }
    }

    pub fn grid(rows: usize, cols: usize) -> Self {
        ProblemSpec {
            rows: Some(rows),
            cols: Some(cols),
            ..ProblemSpec::empty(ProblemType::Grid)
        }
    }

    fn polyhedron(&self) -> Result<Option<LpInstance>> {
        let (a, b) = match (&self.a, &self.b) {
            (Some(a), Some(b)) => (a, b),
            (None, None) => return Ok(None),
            _ => return Err(Error::Schema("A and b must be given together".into())),
        };
        let kind = if self.equality.unwrap_or(false) {
            ConstraintKind::Eq
        } else {
            ConstraintKind::Le
        };
        let a = matrix_from_rows(a, "A")?;
        LpInstance::new(a, b.clone(), kind, self.nonneg.unwrap_or(true)).map(Some)
    }

    /// Builds and validates the instance.
    pub fn build(&self) -> Result<Box<dyn DecisionOracle + Send>> {
        let missing = |f: &str| Error::Schema(format!("{f} is required for this type"));
        Ok(match self.kind {
            ProblemType::Lp => Box::new(self.polyhedron()?.ok_or_else(|| missing("A/b"))?),
            ProblemType::Qp => {
                let q = matrix_from_rows(self.q.as_ref().ok_or_else(|| missing("Q"))?, "Q")?;
                let lambda = self.lambda.unwrap_or(0.0);
                Box::new(QpInstance::new(q, lambda, self.polyhedron()?)?)
            }
            ProblemType::Knapsack => Box::new(KnapsackInstance::new(
                self.weights.clone().ok_or_else(|| missing("weights"))?,
                self.capacity.ok_or_else(|| missing("capacity"))?,
            )?),
            ProblemType::Grid => {
                let (_, lp) = build_grid_lp(
                    self.rows.ok_or_else(|| missing("rows"))?,
                    self.cols.ok_or_else(|| missing("cols"))?,
                )?;
                Box::new(lp)
            }
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trip() {
        let lp = LpInstance::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            vec![1.0],
            ConstraintKind::Le,
            true,
        )
        .unwrap();
        let spec = ProblemSpec::from_lp(&lp);
        let back = ProblemSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(spec, back);
        let oracle = back.build().unwrap();
        let z = oracle.solve(&[-1.0, -2.0]).unwrap();
        assert_eq!(z.z, vec![0.0, 1.0]);
    }

    #[test]
    fn spec_reads_bare_json() {
        let s = r#"{"type":"knapsack","weights":[1,2,3],"capacity":5}"#;
        let oracle = ProblemSpec::from_json(s).unwrap().build().unwrap();
        let z = oracle.solve(&[-6.0, -10.0, -12.0]).unwrap();
        assert_eq!(z.z, vec![0.0, 1.0, 1.0]);

        let s = r#"{"type":"grid","rows":4,"cols":4}"#;
        assert_eq!(ProblemSpec::from_json(s).unwrap().build().unwrap().dim(), 24);
    }

    #[test]
    fn spec_missing_field() {
        let s = r#"{"type":"qp","lambda":1.0}"#;
        assert!(matches!(
            ProblemSpec::from_json(s).unwrap().build(),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn counting_oracle_counts() {
        let k = KnapsackInstance::new(vec![1.0, 1.0], 1.0).unwrap();
        let counted = CountingOracle::new(&k);
        for _ in 0..3 {
            counted.solve(&[-1.0, -2.0]).unwrap();
        }
        assert_eq!(counted.calls(), 3);
    }
}
