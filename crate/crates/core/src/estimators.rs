//! Regret estimators over an archive of `(c_i, pi(c_i))` pairs.
//!
//! Regret is `E[c'pi(c)] - E[c'pi(mu)]`. It splits into
//! `Cov(c, pi(c)) + mu'(E[pi(c)] - pi(mu))`; the covariance part needs no
//! solves once decisions are archived, the residual part needs one.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::prob::{SampleMatrix, Seed};
use crate::problems::{dot, DecisionOracle};
use crate::{par, CovMatrix, Error, Result};

/// Which benchmark decision empirical regret compares against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    /// The generator's true mean.
    Known(Vec<f64>),
    /// The sample mean of the costs.
    Estimated,
}

impl MeanMode {
    /// The benchmark cost vector for `costs`.
    pub fn resolve(&self, costs: &SampleMatrix) -> Result<Vec<f64>> {
        match self {
            MeanMode::Known(mu) => {
                if mu.len() != costs.n_cols() {
                    return Err(Error::dim(format!(
                        "known mean has length {}, costs have {} columns",
                        mu.len(),
                        costs.n_cols()
                    )));
                }
                Ok(mu.clone())
            }
            MeanMode::Estimated => Ok(costs.column_means()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cov,
    Empirical,
    Saa,
    Analytic,
    Residual,
    Corrected,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Cov => "cov",
            Method::Empirical => "empirical",
            Method::Saa => "saa",
            Method::Analytic => "analytic",
            Method::Residual => "residual",
            Method::Corrected => "corrected",
        };
        f.write_str(s)
    }
}

/// A regret estimate in cost units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretEstimate {
    pub value: f64,
    pub method: Method,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<(f64, f64)>,
    /// Optimization solves performed to produce the estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solves: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl RegretEstimate {
    pub fn new(value: f64, method: Method, n: usize) -> Self {
        RegretEstimate {
            value,
            method,
            n,
            stderr: None,
            ci: None,
            solves: None,
            wall_clock_secs: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Archive of costs and their hindsight-optimal decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePairs {
    pub costs: SampleMatrix,
    pub decisions: SampleMatrix,
    pub mean_mode: MeanMode,
}

impl SamplePairs {
    pub fn new(costs: SampleMatrix, decisions: SampleMatrix, mean_mode: MeanMode) -> Result<Self> {
        if costs.n_rows() != decisions.n_rows() {
            return Err(Error::dim(format!(
                "{} cost rows but {} decision rows",
                costs.n_rows(),
                decisions.n_rows()
            )));
        }
        if costs.n_rows() == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if costs.n_cols() != decisions.n_cols() {
            return Err(Error::dim(format!(
                "costs have {} columns but decisions have {}",
                costs.n_cols(),
                decisions.n_cols()
            )));
        }
        if let MeanMode::Known(mu) = &mean_mode {
            if mu.len() != costs.n_cols() {
                return Err(Error::dim("known mean length differs from cost dimension"));
            }
        }
        Ok(SamplePairs {
            costs,
            decisions,
            mean_mode,
        })
    }

    pub fn len(&self) -> usize {
        self.costs.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.costs.n_cols()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[f64], &[f64])> + '_ {
        self.costs.rows().zip(self.decisions.rows())
    }

    /// First `n` pairs.
    pub fn truncated(&self, n: usize) -> SamplePairs {
        SamplePairs {
            costs: self.costs.truncated(n),
            decisions: self.decisions.truncated(n),
            mean_mode: self.mean_mode.clone(),
        }
    }

    /// Reads the `c_0..c_{d-1}, z_0..z_{d-1}` CSV layout.
    pub fn read_csv(path: impl AsRef<Path>, mean_mode: MeanMode) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let width = headers.len();
        if width == 0 || width % 2 != 0 {
            return Err(Error::Schema(format!(
                "expected an even number of columns, found {width}"
            )));
        }
        let d = width / 2;
        for (k, h) in headers.iter().enumerate() {
            let want = if k < d {
                format!("c_{k}")
            } else {
                format!("z_{}", k - d)
            };
            if h.trim() != want {
                return Err(Error::Schema(format!("column {k} is `{h}`, expected `{want}`")));
            }
        }
        let (mut costs, mut decisions) = (Vec::new(), Vec::new());
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            for (k, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Schema(format!("row {}: `{field}` is not a number", line + 1))
                })?;
                if k < d {
                    costs.push(v);
                } else {
                    decisions.push(v);
                }
            }
        }
        let n = costs.len() / d;
        SamplePairs::new(
            SampleMatrix::from_vec(n, d, costs)?,
            SampleMatrix::from_vec(n, d, decisions)?,
            mean_mode,
        )
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.dim();
        let header: Vec<String> = (0..d)
            .map(|k| format!("c_{k}"))
            .chain((0..d).map(|k| format!("z_{k}")))
            .collect();
        w.write_record(&header)?;
        for (c, z) in self.iter() {
            w.write_record(c.iter().chain(z).map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves every cost row, in parallel when enabled.
pub fn solve_archive<O: DecisionOracle + ?Sized>(
    costs: &SampleMatrix,
    oracle: &O,
    mean_mode: MeanMode,
) -> Result<SamplePairs> {
    let d = costs.n_cols();
    if oracle.dim() != d {
        return Err(Error::dim(format!(
            "oracle dimension {} differs from cost dimension {d}",
            oracle.dim()
        )));
    }
    let rows = par::try_map_indexed(costs.n_rows(), |i| oracle.solve(costs.row(i)))?;
    let mut decisions = SampleMatrix::zeros(costs.n_rows(), d);
    for (i, r) in rows.into_iter().enumerate() {
        decisions.row_mut(i).copy_from_slice(&r.z);
    }
    SamplePairs::new(costs.clone(), decisions, mean_mode)
}

/// Options for [`cov_regret_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CovOptions {
    /// Normalize by `n - 1` instead of `n`.
    pub unbiased: bool,
}

/// Sample covariance `(1/n) sum (c_i - cbar)'(z_i - zbar)` from a single
/// traversal of `pairs`.
///
/// Sums are accumulated relative to the first pair, which leaves the result
/// unchanged but avoids cancellation when means are large.
pub fn cov_regret_streaming<'a, I>(pairs: I, opts: CovOptions) -> Result<(f64, usize)>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut iter = pairs.into_iter();
    let Some((c0, z0)) = iter.next() else {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    };
    let d = c0.len();
    if z0.len() != d {
        return Err(Error::dim("cost and decision rows differ in length"));
    }
    let mut sum_c = vec![0.0; d];
    let mut sum_z = vec![0.0; d];
    let mut sum_cz = 0.0;
    let mut n = 1usize;
    for (c, z) in iter {
        if c.len() != d || z.len() != d {
            return Err(Error::dim("ragged pair rows"));
        }
        let mut cz = 0.0;
        for k in 0..d {
            let dc = c[k] - c0[k];
            let dz = z[k] - z0[k];
            sum_c[k] += dc;
            sum_z[k] += dz;
            cz += dc * dz;
        }
        sum_cz += cz;
        n += 1;
    }
    let nf = n as f64;
    let cross = dot(&sum_c, &sum_z) / (nf * nf);
    let mut value = sum_cz / nf - cross;
    if opts.unbiased {
        value = if n > 1 { value * nf / (nf - 1.0) } else { 0.0 };
    }
    Ok((value, n))
}

/// One-pass covariance estimator with `1/n` normalization.
pub fn cov_regret(pairs: &SamplePairs) -> RegretEstimate {
    cov_regret_with(pairs, CovOptions::default())
}

pub fn cov_regret_with(pairs: &SamplePairs, opts: CovOptions) -> RegretEstimate {
    let (value, n) =
        cov_regret_streaming(pairs.iter(), opts).expect("SamplePairs is nonempty and rectangular");
    let mut est = RegretEstimate::new(value, Method::Cov, n);
    est.solves = Some(0);
    est
}

/// Standard error of the covariance estimator from its influence function
/// `(c_i - cbar)'(z_i - zbar) - cov`. Needs a second pass.
pub fn cov_regret_stderr(pairs: &SamplePairs) -> f64 {
    let n = pairs.len();
    if n < 2 {
        return 0.0;
    }
    let cbar = pairs.costs.column_means();
    let zbar = pairs.decisions.column_means();
    let psi: Vec<f64> = pairs
        .iter()
        .map(|(c, z)| (0..c.len()).map(|k| (c[k] - cbar[k]) * (z[k] - zbar[k])).sum())
        .collect();
    sample_sd(&psi) / (n as f64).sqrt()
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Sample standard deviation with `n - 1` normalization.
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn regret_terms(costs: &SampleMatrix, decisions: &SampleMatrix, bench: &[f64]) -> Vec<f64> {
    costs
        .rows()
        .zip(decisions.rows())
        .map(|(c, z)| (0..c.len()).map(|k| c[k] * (z[k] - bench[k])).sum())
        .collect()
}

fn estimate_from_terms(terms: &[f64], method: Method) -> RegretEstimate {
    let n = terms.len();
    let mut est = RegretEstimate::new(mean(terms), method, n);
    est.stderr = Some(sample_sd(terms) / (n as f64).sqrt());
    est
}

/// `(1/n) sum c_i'pi(c_i) - (1/n) sum c_i'pi(mu_hat)`, solving every sample.
pub fn empirical_regret<O: DecisionOracle + ?Sized>(
    samples: &SampleMatrix,
    oracle: &O,
    mean_mode: &MeanMode,
) -> Result<RegretEstimate> {
    if samples.n_rows() == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let pairs = solve_archive(samples, oracle, mean_mode.clone())?;
    let mut est = empirical_regret_from_pairs(&pairs, oracle)?;
    est.solves = Some(samples.n_rows() + 1);
    Ok(est)
}

/// Empirical regret reusing the archived decisions; one solve at the
/// benchmark mean.
pub fn empirical_regret_from_pairs<O: DecisionOracle + ?Sized>(
    pairs: &SamplePairs,
    oracle: &O,
) -> Result<RegretEstimate> {
    let mu = pairs.mean_mode.resolve(&pairs.costs)?;
    let bench = oracle.solve(&mu)?.z;
    let terms = regret_terms(&pairs.costs, &pairs.decisions, &bench);
    let mut est = estimate_from_terms(&terms, Method::Empirical);
    est.solves = Some(1);
    Ok(est)
}

/// How SAA picks its scenarios from the archive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    WithoutReplacement,
    WithReplacement,
}

/// SAA regret on `scenario_count` scenarios drawn from `samples`.
///
/// Scenarios are visited in increasing index order, so with
/// `scenario_count = n` this matches [`empirical_regret`] with an estimated
/// mean bit for bit. Performs exactly `scenario_count + 1` solves.
pub fn saa_regret<O: DecisionOracle + ?Sized>(
    samples: &SampleMatrix,
    oracle: &O,
    scenario_count: usize,
    seed: Seed,
    resampling: Resampling,
) -> Result<RegretEstimate> {
    let start = Instant::now();
    let n = samples.n_rows();
    if scenario_count == 0 {
        return Err(Error::invalid("scenario_count must be at least 1"));
    }
    let mut rng = seed.rng();
    let mut idx: Vec<usize> = match resampling {
        Resampling::WithoutReplacement => {
            if scenario_count > n {
                return Err(Error::InsufficientSamples {
                    needed: scenario_count,
                    got: n,
                });
            }
            if scenario_count == n {
                (0..n).collect()
            } else {
                index::sample(&mut rng, n, scenario_count).into_vec()
            }
        }
        Resampling::WithReplacement => {
            if n == 0 {
                return Err(Error::InsufficientSamples { needed: 1, got: 0 });
            }
            (0..scenario_count).map(|_| rng.random_range(0..n)).collect()
        }
    };
    idx.sort_unstable();
    let scen = samples.select_rows(&idx);
    let cbar = scen.column_means();
    let bench = oracle.solve(&cbar)?.z;
    let decisions = par::try_map_indexed(scen.n_rows(), |i| oracle.solve(scen.row(i)))?;
    let mut z = SampleMatrix::zeros(scen.n_rows(), scen.n_cols());
    for (i, d) in decisions.into_iter().enumerate() {
        z.row_mut(i).copy_from_slice(&d.z);
    }
    let terms = regret_terms(&scen, &z, &bench);
    let mut est = estimate_from_terms(&terms, Method::Saa);
    est.solves = Some(scenario_count + 1);
    est.wall_clock_secs = Some(start.elapsed().as_secs_f64());
    Ok(est)
}

/// `-tr((Q + lambda I)^{-1} Sigma)`: the exact covariance regret of the
/// unconstrained QP. No solves.
pub fn qp_analytic_cov(q: &DMatrix<f64>, lambda: f64, sigma: &CovMatrix) -> Result<f64> {
    let d = q.nrows();
    if q.ncols() != d || sigma.dim() != d {
        return Err(Error::dim(format!(
            "Q is {}x{}, Sigma is {}x{}",
            q.nrows(),
            q.ncols(),
            sigma.dim(),
            sigma.dim()
        )));
    }
    let h = q + DMatrix::identity(d, d) * lambda;
    let chol = h.cholesky().ok_or(Error::Singular)?;
    let x = chol.solve(sigma.matrix());
    Ok(-x.trace())
}

/// `cbar'((1/n) sum pi(c_i) - pi(cbar))` with one extra solve at `cbar`.
pub fn residual_estimator<O: DecisionOracle + ?Sized>(
    pairs: &SamplePairs,
    oracle: &O,
) -> Result<f64> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let cbar = pairs.costs.column_means();
    let zbar = pairs.decisions.column_means();
    let at_mean = oracle.solve(&cbar)?.z;
    Ok((0..cbar.len()).map(|k| cbar[k] * (zbar[k] - at_mean[k])).sum())
}

/// Covariance estimate plus the estimated residual.
pub fn corrected_regret<O: DecisionOracle + ?Sized>(
    pairs: &SamplePairs,
    oracle: &O,
) -> Result<RegretEstimate> {
    let residual = residual_estimator(pairs, oracle)?;
    let cov = cov_regret(pairs);
    let mut est = RegretEstimate::new(cov.value + residual, Method::Corrected, pairs.len());
    est.solves = Some(1);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{box_constraints, LpInstance};

    fn pairs_1d(c: &[f64], z: &[f64]) -> SamplePairs {
        let rows = |v: &[f64]| SampleMatrix::from_vec(v.len(), 1, v.to_vec()).unwrap();
        SamplePairs::new(rows(c), rows(z), MeanMode::Estimated).unwrap()
    }

    fn unit_box() -> LpInstance {
        box_constraints(&[0.0], &[1.0]).unwrap()
    }

    #[test]
    fn cov_hand_examples() {
        assert_eq!(cov_regret(&pairs_1d(&[1.0, 3.0], &[2.0, 4.0])).value, 1.0);
        assert_eq!(cov_regret(&pairs_1d(&[1.0, 3.0], &[4.0, 2.0])).value, -1.0);
        assert_eq!(cov_regret(&pairs_1d(&[5.0], &[7.0])).value, 0.0);
    }

    #[test]
    fn unbiased_flag_rescales() {
        let p = pairs_1d(&[1.0, 3.0, 8.0], &[2.0, 4.0, -1.0]);
        let a = cov_regret(&p).value;
        let b = cov_regret_with(&p, CovOptions { unbiased: true }).value;
        assert!((b - a * 1.5).abs() < 1e-12);
    }

    #[test]
    fn empirical_box_examples() {
        let lp = unit_box();
        let s = SampleMatrix::from_vec(2, 1, vec![-1.0, 2.0]).unwrap();
        let e = empirical_regret(&s, &lp, &MeanMode::Known(vec![0.5])).unwrap();
        assert!((e.value + 0.5).abs() < 1e-12);
        assert_eq!(e.solves, Some(3));

        let s = SampleMatrix::from_vec(2, 1, vec![-2.0, -1.0]).unwrap();
        let e = empirical_regret(&s, &lp, &MeanMode::Estimated).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn identical_samples_have_zero_regret() {
        let lp = unit_box();
        let s = SampleMatrix::from_vec(3, 1, vec![0.7; 3]).unwrap();
        let e = empirical_regret(&s, &lp, &MeanMode::Estimated).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn saa_examples() {
        let lp = unit_box();
        let s = SampleMatrix::from_vec(2, 1, vec![-1.0, 2.0]).unwrap();
        let e = saa_regret(&s, &lp, 2, Seed(1), Resampling::WithoutReplacement).unwrap();
        assert!((e.value + 0.5).abs() < 1e-12);
        assert_eq!(e.solves, Some(3));
        assert!(saa_regret(&s, &lp, 3, Seed(1), Resampling::WithoutReplacement).is_err());
        let e = saa_regret(&s, &lp, 5, Seed(1), Resampling::WithReplacement).unwrap();
        assert_eq!(e.solves, Some(6));
    }

    #[test]
    fn analytic_cov_examples() {
        let i2 = DMatrix::identity(2, 2);
        assert!((qp_analytic_cov(&i2, 1.0, &CovMatrix::identity(2)).unwrap() + 1.0).abs() < 1e-14);
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0]));
        let sigma = CovMatrix::diagonal(&[2.0, 4.0]).unwrap();
        assert!((qp_analytic_cov(&q, 1.0, &sigma).unwrap() + 2.0).abs() < 1e-14);
        let zero = DMatrix::zeros(2, 2);
        assert!(matches!(
            qp_analytic_cov(&zero, 0.0, &sigma),
            Err(Error::Singular)
        ));
    }

    #[test]
    fn residual_needs_two_samples() {
        let lp = unit_box();
        let p = pairs_1d(&[1.0], &[0.0]);
        assert!(matches!(
            residual_estimator(&p, &lp),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        ));
        assert!(corrected_regret(&p, &lp).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let p = SamplePairs::new(
            SampleMatrix::from_rows(&[[1.5, -2.0], [0.25, 3.0]]).unwrap(),
            SampleMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap(),
            MeanMode::Estimated,
        )
        .unwrap();
        p.write_csv(&path).unwrap();
        let back = SamplePairs::read_csv(&path, MeanMode::Estimated).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn csv_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        std::fs::write(&path, "c_0,x_0\n1,2\n").unwrap();
        assert!(matches!(
            SamplePairs::read_csv(&path, MeanMode::Estimated),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn estimate_json_shape() {
        let e = RegretEstimate::new(-1.0, Method::Cov, 10);
        let v: serde_json::Value = serde_json::from_str(&e.to_json().unwrap()).unwrap();
        assert_eq!(v["method"], "cov");
        assert_eq!(v["n"], 10);
        assert!(v.get("stderr").is_none());
    }
}
