//! Dense covariance matrices, seeded random streams and Gaussian cost
//! sampling.
//!
//! Every random quantity in the crate flows from a [`Seed`]. Streams use
//! ChaCha8 (`rand_chacha`), which is portable across platforms, so a seed
//! reproduces the same bits everywhere. Independent sub-streams are obtained
//! with ChaCha's 64-bit stream counter rather than by perturbing the seed.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Seed of a reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    /// The main stream for this seed.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Stream `task + 1` of this seed; stream 0 is reserved for [`Seed::rng`].
    pub fn stream(self, task: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(task.wrapping_add(1));
        rng
    }

    /// Child seed for task `task`, suitable for further derivation.
    pub fn derive(self, task: u64) -> Seed {
        Seed(self.stream(task).next_u64())
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// Draws a vector of `d` independent standard normals.
pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Row-major `n x d` matrix of samples; row `i` is observation `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SampleMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "sample buffer has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(SampleMatrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(SampleMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Keeps the first `n` rows.
    pub fn truncated(&self, n: usize) -> SampleMatrix {
        let n = n.min(self.rows);
        SampleMatrix {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    /// Rows selected by `idx`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> SampleMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        SampleMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let n = self.rows.max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Sample covariance with `1/n` normalization.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.column_means();
        let d = self.cols;
        let mut s = DMatrix::zeros(d, d);
        for r in self.rows() {
            for i in 0..d {
                let ci = r[i] - mean[i];
                for j in 0..=i {
                    s[(i, j)] += ci * (r[j] - mean[j]);
                }
            }
        }
        let n = self.rows.max(1) as f64;
        for i in 0..d {
            for j in 0..=i {
                let v = s[(i, j)] / n;
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }
}

/// Lower-triangular Cholesky factor `L` with `L L' = cov`.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot drops to
/// `1e-12 * max diagonal` or below. Only the lower triangle is read.
pub fn cholesky_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::dim(format!("{}x{} is not square", n, cov.ncols())));
    }
    let max_diag = (0..n).map(|i| cov[(i, i)].abs()).fold(0.0_f64, f64::max);
    let tol = 1e-12 * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = cov[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tol) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Symmetric positive-definite covariance matrix with its cached factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    matrix: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl CovMatrix {
    /// Validates symmetry (to `1e-12` relative) and positive definiteness.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || n == 0 {
            return Err(Error::dim(format!(
                "covariance must be square and nonempty, got {}x{}",
                n,
                matrix.ncols()
            )));
        }
        let scale = matrix.amax();
        for i in 0..n {
            for j in 0..i {
                let gap = (matrix[(i, j)] - matrix[(j, i)]).abs();
                if gap > 1e-12 * scale {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
            }
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let factor = cholesky_factor(&matrix)?;
        Ok(CovMatrix { matrix, factor })
    }

    pub fn identity(d: usize) -> Self {
        CovMatrix {
            matrix: DMatrix::identity(d, d),
            factor: DMatrix::identity(d, d),
        }
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        CovMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower-triangular Cholesky factor.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// `t * self`; the factor scales by `sqrt(t)`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::invalid(format!("scale must be positive, got {t}")));
        }
        Ok(CovMatrix {
            matrix: &self.matrix * t,
            factor: &self.factor * t.sqrt(),
        })
    }
}

/// The law of the cost vector: `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDistribution {
    mean: Vec<f64>,
    cov: CovMatrix,
}

impl CostDistribution {
    pub fn new(mean: Vec<f64>, cov: CovMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::dim(format!(
                "mean has length {}, covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(CostDistribution { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &CovMatrix {
        &self.cov
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        self.cov.factor()
    }

    /// One draw `mean + L g` from the given stream.
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim();
        let g = standard_normal_vec(rng, d);
        let l = self.cov.factor();
        for i in 0..d {
            let mut v = self.mean[i];
            for k in 0..=i {
                v += l[(i, k)] * g[k];
            }
            out[i] = v;
        }
    }
}

/// `n` i.i.d. draws from `dist`, deterministic in `seed`.
pub fn sample_costs(dist: &CostDistribution, n: usize, seed: Seed) -> SampleMatrix {
    let mut rng = seed.rng();
    let mut out = SampleMatrix::zeros(n, dist.dim());
    for i in 0..n {
        dist.draw(&mut rng, out.row_mut(i));
    }
    out
}

/// Random covariance `scale * (G G' / d + 0.1 I)` with standard-normal `G`.
///
/// The `0.1 I` term floors every eigenvalue at `0.1 * scale`.
pub fn random_pd_matrix(d: usize, seed: Seed, scale: f64) -> Result<CovMatrix> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    let mut rng = seed.rng();
    let g = DMatrix::from_fn(d, d, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let mut m = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let dot: f64 = (0..d).map(|k| g[(i, k)] * g[(j, k)]).sum();
            let mut v = scale * dot / d as f64;
            if i == j {
                v += 0.1 * scale;
            }
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    CovMatrix::new(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frob(m: &DMatrix<f64>) -> f64 {
        m.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky_factor(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(l, DMatrix::identity(3, 3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let l = cholesky_factor(&a).unwrap();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_factor(&a),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn degenerate_covariance_rejected() {
        let err = CovMatrix::new(DMatrix::from_element(1, 1, 0.0)).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn asymmetric_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.4, 2.0]);
        assert!(matches!(CovMatrix::new(a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn random_pd_scalar_and_determinism() {
        let one = random_pd_matrix(1, Seed(3), 1.0).unwrap();
        assert!(one.matrix()[(0, 0)] > 0.0);
        let a = random_pd_matrix(5, Seed(7), 1.0).unwrap();
        let b = random_pd_matrix(5, Seed(7), 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_pd_eigen_floor_and_roundtrip() {
        for d in [1usize, 2, 5, 17, 40, 100] {
            for s in 0..3u64 {
                let scale = 0.5 + s as f64;
                let cov = random_pd_matrix(d, Seed(100 + s), scale).unwrap();
                let eig = cov.matrix().clone().symmetric_eigen();
                let min = eig.eigenvalues.min();
                assert!(min >= 0.1 * scale - 1e-9, "d={d} min eig {min}");
                let l = cov.factor();
                let rel = frob(&(l * l.transpose() - cov.matrix())) / frob(cov.matrix());
                assert!(rel <= 1e-10, "d={d} round-trip {rel:e}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cov = random_pd_matrix(4, Seed(1), 1.0).unwrap();
        let dist = CostDistribution::new(vec![1.0, -1.0, 0.0, 2.0], cov).unwrap();
        let a = sample_costs(&dist, 50, Seed(9));
        let b = sample_costs(&dist, 50, Seed(9));
        assert_eq!(a, b);
        let c = sample_costs(&dist, 50, Seed(10));
        assert_ne!(a, c);
    }

    #[test]
    fn sample_moments_match_standard_normal() {
        let d = 3;
        let dist = CostDistribution::new(vec![0.0; d], CovMatrix::identity(d)).unwrap();
        let n = 20_000;
        let s = sample_costs(&dist, n, Seed(42));
        let tol = 5.0 / (n as f64).sqrt();
        for m in s.column_means() {
            assert!(m.abs() < tol);
        }
        let cov = s.covariance();
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - target).abs() < tol, "cov[{i},{j}]");
            }
        }
    }

    #[test]
    fn sample_covariance_converges() {
        // median over 20 seeds of ||S_n - Sigma||_F on n = 100, 1000, 10000
        let cov = random_pd_matrix(4, Seed(5), 1.0).unwrap();
        let dist = CostDistribution::new(vec![0.5; 4], cov.clone()).unwrap();
        let mut medians = Vec::new();
        for n in [100usize, 1000, 10_000] {
            let mut errs: Vec<f64> = (0..20)
                .map(|s| {
                    let x = sample_costs(&dist, n, Seed(1000 + s));
                    frob(&(x.covariance() - cov.matrix()))
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push((errs[9] + errs[10]) / 2.0);
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    #[test]
    fn streams_are_independent_of_parent() {
        let mut parent = Seed(1).rng();
        let mut child = Seed(1).stream(0);
        assert_ne!(parent.next_u64(), child.next_u64());
        assert_eq!(Seed(1).derive(4), Seed(1).derive(4));
        assert_ne!(Seed(1).derive(4), Seed(1).derive(5));
    }
}
