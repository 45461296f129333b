//! Seeded simulation experiments comparing running empirical regret with
//! the running covariance estimate.
//!
//! A run fixes one instance and one cost law, draws `iterations` costs,
//! solves each (in parallel when enabled) and then accumulates running
//! statistics sequentially in draw order, so traces are bit-identical for a
//! given configuration.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::estimators::{cov_regret_stderr, qp_analytic_cov, sample_sd, SamplePairs};
use crate::prob::{random_pd_matrix, sample_costs, CostDistribution, CovMatrix, Seed};
use crate::problems::{
    box_constraints, dot, random_lp, DecisionOracle, KnapsackInstance, LpInstance, QpInstance,
};
use crate::{par, Error, MeanMode, Result, SampleMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lp,
    QpUnconstrained,
    QpConstrained,
    Knapsack,
}

/// Benchmark mean used by the empirical regret trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkMean {
    /// The generator's mean.
    #[default]
    Known,
    /// The running sample mean (one extra solve per iteration).
    Estimated,
}

/// Feasible region of the constrained QP family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QpRegion {
    Box { lo: f64, hi: f64 },
    /// `random_lp(n_vars, n_constraints)`.
    RandomPolytope,
}

/// Cost covariance of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovSpec {
    /// `random_pd_matrix(n_vars, scale)`; `None` means `scale = n_vars`.
    Random { scale: Option<f64> },
    /// `variance * I`.
    Isotropic { variance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: Family,
    pub n_vars: usize,
    pub n_constraints: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub seed: Seed,
    pub mean_mode: BenchmarkMean,
    pub cov: CovSpec,
    pub region: QpRegion,
    /// Knapsack weights are `U[1, w_max]`.
    pub w_max: f64,
    /// Knapsack capacity as a fraction of total weight.
    pub capacity_fraction: f64,
    /// Knapsack value means are `U[lo, hi]`.
    pub value_mean_range: (f64, f64),
    /// Knapsack value variance (times identity).
    pub value_variance: f64,
    /// Rows between residual-estimate checkpoints; 0 picks `iterations / 20`.
    pub checkpoint_every: usize,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 5000 iterations, 10 variables, 5 constraints.
    pub fn new(family: Family, seed: Seed) -> Self {
        ExperimentConfig {
            family,
            n_vars: 10,
            n_constraints: 5,
            iterations: 5000,
            lambda: 1.0,
            seed,
            mean_mode: BenchmarkMean::Known,
            cov: CovSpec::Random { scale: None },
            region: QpRegion::Box { lo: -1.0, hi: 1.0 },
            w_max: 10.0,
            capacity_fraction: 0.5,
            value_mean_range: (1.0, 10.0),
            value_variance: 2.0,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 10 {
            return Err(Error::invalid(format!(
                "iterations must be at least 10, got {}",
                self.iterations
            )));
        }
        if self.n_vars == 0 {
            return Err(Error::invalid("n_vars must be at least 1"));
        }
        if self.family == Family::Lp && self.n_constraints == 0 {
            return Err(Error::invalid("LP family needs n_constraints >= 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        let (lo, hi) = self.value_mean_range;
        if !(lo <= hi) {
            return Err(Error::invalid("value_mean_range must satisfy lo <= hi"));
        }
        if !(self.value_variance > 0.0) {
            return Err(Error::invalid("value_variance must be positive"));
        }
        Ok(())
    }
}

/// A generated instance with its cost law.
pub struct ExperimentSetup {
    pub oracle: Box<dyn DecisionOracle + Send>,
    pub dist: CostDistribution,
    /// Present for the unconstrained QP family.
    pub analytic_cov: Option<f64>,
}

fn cost_cov(cfg: &ExperimentConfig, seed: Seed) -> Result<CovMatrix> {
    let d = cfg.n_vars;
    match cfg.cov {
        CovSpec::Random { scale } => random_pd_matrix(d, seed, scale.unwrap_or(d as f64)),
        CovSpec::Isotropic { variance } => CovMatrix::diagonal(&vec![variance; d]),
    }
}

fn standard_normal_mean(d: usize, seed: Seed) -> Vec<f64> {
    let mut rng = seed.rng();
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Generates the instance and cost law. Streams: 0 instance, 1 mean,
/// 2 covariance (costs use stream 3).
pub fn build_setup(cfg: &ExperimentConfig) -> Result<ExperimentSetup> {
    cfg.validate()?;
    let d = cfg.n_vars;
    let seed = cfg.seed;
    match cfg.family {
        Family::Lp => {
            let lp: LpInstance = random_lp(d, cfg.n_constraints, seed.derive(0))?;
            let dist = CostDistribution::new(
                standard_normal_mean(d, seed.derive(1)),
                cost_cov(cfg, seed.derive(2))?,
            )?;
            Ok(ExperimentSetup {
                oracle: Box::new(lp),
                dist,
                analytic_cov: None,
            })
        }
        Family::QpUnconstrained | Family::QpConstrained => {
            let sigma = cost_cov(cfg, seed.derive(2))?;
            let region = match (cfg.family, &cfg.region) {
                (Family::QpUnconstrained, _) => None,
                (_, QpRegion::Box { lo, hi }) => Some(box_constraints(&vec![*lo; d], &vec![*hi; d])?),
                (_, QpRegion::RandomPolytope) => Some(random_lp(d, cfg.n_constraints, seed.derive(0))?),
            };
            let qp = QpInstance::new(sigma.matrix().clone(), cfg.lambda, region)?;
            let analytic_cov = if cfg.family == Family::QpUnconstrained {
                Some(qp_analytic_cov(sigma.matrix(), cfg.lambda, &sigma)?)
            } else {
                None
            };
            let dist = CostDistribution::new(standard_normal_mean(d, seed.derive(1)), sigma)?;
            Ok(ExperimentSetup {
                oracle: Box::new(qp),
                dist,
                analytic_cov,
            })
        }
        Family::Knapsack => {
            let k = KnapsackInstance::random(d, cfg.w_max, cfg.capacity_fraction, seed.derive(0))?;
            let (lo, hi) = cfg.value_mean_range;
            let mut rng = seed.derive(1).rng();
            // cost = -value
            let mean: Vec<f64> = (0..d).map(|_| -rng.random_range(lo..=hi)).collect();
            let cov = CovMatrix::diagonal(&vec![cfg.value_variance; d])?;
            Ok(ExperimentSetup {
                oracle: Box::new(k),
                dist: CostDistribution::new(mean, cov)?,
                analytic_cov: None,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based sample count.
    pub iter: usize,
    pub running_empirical: f64,
    pub running_cov: f64,
    pub analytic: Option<f64>,
    pub residual_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub config: ExperimentConfig,
    pub empirical: f64,
    pub covariance: f64,
    /// `|cov - emp| / max(|emp|, 1e-12)`
    pub relative_gap: f64,
    pub empirical_stderr: f64,
    pub cov_stderr: f64,
    pub analytic: Option<f64>,
    pub residual_hat: Option<f64>,
    /// Largest running empirical value after the first row.
    pub max_running_empirical: f64,
    /// Rows where the running estimates have strictly opposite signs.
    pub sign_disagreements: usize,
    pub final_sign_disagree: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
    pub summary: TraceSummary,
    pub pairs: SamplePairs,
}

pub fn relative_gap(cov: f64, emp: f64) -> f64 {
    (cov - emp).abs() / emp.abs().max(1e-12)
}

/// Runs any family.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ConvergenceTrace> {
    let setup = build_setup(cfg)?;
    run_with_setup(cfg, &setup)
}

fn require(cfg: &ExperimentConfig, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{what} runner called with family {:?}",
            cfg.family
        )))
    }
}

pub fn run_lp_experiment(cfg: &ExperimentConfig) -> Result<ConvergenceTrace> {
    require(cfg, cfg.family == Family::Lp, "LP")?;
    run_experiment(cfg)
}

pub fn run_qp_experiment(cfg: &ExperimentConfig) -> Result<ConvergenceTrace> {
    require(
        cfg,
        matches!(cfg.family, Family::QpUnconstrained | Family::QpConstrained),
        "QP",
    )?;
    run_experiment(cfg)
}

pub fn run_knapsack_experiment(cfg: &ExperimentConfig) -> Result<ConvergenceTrace> {
    require(cfg, cfg.family == Family::Knapsack, "knapsack")?;
    run_experiment(cfg)
}

/// Runs a configuration on an already generated setup.
pub fn run_with_setup(cfg: &ExperimentConfig, setup: &ExperimentSetup) -> Result<ConvergenceTrace> {
    cfg.validate()?;
    let n = cfg.iterations;
    let oracle = setup.oracle.as_ref();
    let costs = sample_costs(&setup.dist, n, cfg.seed.derive(3));
    let d = costs.n_cols();
    let decisions = par::try_map_indexed(n, |i| oracle.solve(costs.row(i)).map(|s| s.z))?;
    let z = SampleMatrix::from_rows(&decisions)?;

    // running sums, shifted by the first row for stability
    let (c0, z0) = (costs.row(0).to_vec(), z.row(0).to_vec());
    let mut sum_c = vec![0.0; d];
    let mut sum_z = vec![0.0; d];
    let mut sum_cz_shift = 0.0;
    let mut sum_cz = 0.0;
    let mut means = Vec::with_capacity(n);
    let mut partial = Vec::with_capacity(n);
    for i in 0..n {
        let (c, zi) = (costs.row(i), z.row(i));
        sum_cz += dot(c, zi);
        let mut s = 0.0;
        for k in 0..d {
            let dc = c[k] - c0[k];
            let dz = zi[k] - z0[k];
            sum_c[k] += dc;
            sum_z[k] += dz;
            s += dc * dz;
        }
        sum_cz_shift += s;
        let m = (i + 1) as f64;
        let cbar: Vec<f64> = (0..d).map(|k| c0[k] + sum_c[k] / m).collect();
        let zbar: Vec<f64> = (0..d).map(|k| z0[k] + sum_z[k] / m).collect();
        let cov = sum_cz_shift / m - dot(&sum_c, &sum_z) / (m * m);
        partial.push((sum_cz / m, cov));
        means.push((cbar, zbar));
    }

    let every = if cfg.checkpoint_every == 0 {
        (n / 20).max(1)
    } else {
        cfg.checkpoint_every
    };
    let is_checkpoint = |i: usize| (i + 1) % every == 0 || i + 1 == n;
    let known_bench = oracle.solve(setup.dist.mean())?.z;
    // pi(cbar_i), needed per row for estimated benchmarks and at checkpoints
    let at_running_mean: Vec<Option<Vec<f64>>> = par::try_map_indexed(n, |i| {
        let needed = cfg.mean_mode == BenchmarkMean::Estimated || (i >= 1 && is_checkpoint(i));
        if needed {
            oracle.solve(&means[i].0).map(|s| Some(s.z))
        } else {
            Ok(None)
        }
    })?;

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (cbar, zbar) = &means[i];
        let (mean_cz, cov) = partial[i];
        let (bench_cost, bench_z) = match cfg.mean_mode {
            BenchmarkMean::Known => (cbar.as_slice(), known_bench.as_slice()),
            BenchmarkMean::Estimated => (
                cbar.as_slice(),
                at_running_mean[i].as_deref().expect("solved for every row"),
            ),
        };
        let emp = mean_cz - dot(bench_cost, bench_z);
        let residual_hat = match &at_running_mean[i] {
            Some(pz) if i >= 1 && is_checkpoint(i) => {
                Some((0..d).map(|k| cbar[k] * (zbar[k] - pz[k])).sum())
            }
            _ => None,
        };
        rows.push(TraceRow {
            iter: i + 1,
            running_empirical: emp,
            running_cov: cov,
            analytic: setup.analytic_cov,
            residual_hat,
        });
    }

    let mean_mode = match cfg.mean_mode {
        BenchmarkMean::Known => MeanMode::Known(setup.dist.mean().to_vec()),
        BenchmarkMean::Estimated => MeanMode::Estimated,
    };
    let pairs = SamplePairs::new(costs, z, mean_mode)?;
    let last = rows.last().expect("iterations >= 10");
    let bench = match cfg.mean_mode {
        BenchmarkMean::Known => known_bench.clone(),
        BenchmarkMean::Estimated => at_running_mean[n - 1].clone().expect("solved"),
    };
    let terms: Vec<f64> = pairs
        .iter()
        .map(|(c, zi)| (0..d).map(|k| c[k] * (zi[k] - bench[k])).sum())
        .collect();
    let sign = |v: f64| if v > 1e-12 { 1 } else if v < -1e-12 { -1 } else { 0 };
    let disagree = |r: &TraceRow| sign(r.running_cov) * sign(r.running_empirical) < 0;
    let summary = TraceSummary {
        config: cfg.clone(),
        empirical: last.running_empirical,
        covariance: last.running_cov,
        relative_gap: relative_gap(last.running_cov, last.running_empirical),
        empirical_stderr: sample_sd(&terms) / (n as f64).sqrt(),
        cov_stderr: cov_regret_stderr(&pairs),
        analytic: setup.analytic_cov,
        residual_hat: last.residual_hat,
        max_running_empirical: rows[1..]
            .iter()
            .map(|r| r.running_empirical)
            .fold(f64::NEG_INFINITY, f64::max),
        sign_disagreements: rows.iter().filter(|r| disagree(r)).count(),
        final_sign_disagree: disagree(last),
    };
    Ok(ConvergenceTrace {
        rows,
        summary,
        pairs,
    })
}

impl ConvergenceTrace {
    /// CSV with `iter, running_empirical, running_cov`, plus `analytic` and
    /// `residual_hat` when present (blank on rows without a value).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let analytic = self.summary.analytic.is_some();
        let mut header = vec!["iter", "running_empirical", "running_cov"];
        if analytic {
            header.push("analytic");
        }
        header.push("residual_hat");
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.iter.to_string(),
                r.running_empirical.to_string(),
                r.running_cov.to_string(),
            ];
            if analytic {
                rec.push(r.analytic.map(|v| v.to_string()).unwrap_or_default());
            }
            rec.push(r.residual_hat.map(|v| v.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(family: Family) -> ExperimentConfig {
        ExperimentConfig {
            iterations: 300,
            ..ExperimentConfig::new(family, Seed(5))
        }
    }

    #[test]
    fn trace_length_matches_iterations() {
        let cfg = ExperimentConfig {
            iterations: 10,
            ..ExperimentConfig::new(Family::Lp, Seed(1))
        };
        assert_eq!(run_lp_experiment(&cfg).unwrap().rows.len(), 10);
    }

    #[test]
    fn too_few_iterations_rejected() {
        let cfg = ExperimentConfig {
            iterations: 9,
            ..ExperimentConfig::new(Family::Lp, Seed(1))
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn wrong_family_rejected() {
        assert!(run_lp_experiment(&small(Family::Knapsack)).is_err());
        assert!(run_knapsack_experiment(&small(Family::QpConstrained)).is_err());
    }

    #[test]
    fn traces_are_reproducible() {
        for family in [Family::Lp, Family::QpUnconstrained, Family::QpConstrained, Family::Knapsack] {
            let a = run_experiment(&small(family)).unwrap();
            let b = run_experiment(&small(family)).unwrap();
            assert_eq!(a.rows, b.rows, "{family:?}");
        }
    }

    #[test]
    fn final_row_matches_batch_estimators() {
        let t = run_experiment(&small(Family::Lp)).unwrap();
        let cov = crate::estimators::cov_regret(&t.pairs).value;
        assert!((t.summary.covariance - cov).abs() < 1e-10);
    }

    #[test]
    fn analytic_line_only_for_unconstrained() {
        let t = run_experiment(&small(Family::QpUnconstrained)).unwrap();
        assert!(t.rows.iter().all(|r| r.analytic.is_some()));
        let t = run_experiment(&small(Family::QpConstrained)).unwrap();
        assert!(t.rows.iter().all(|r| r.analytic.is_none()));
    }

    #[test]
    fn csv_has_optional_columns() {
        let dir = tempfile::tempdir().unwrap();
        let t = run_experiment(&small(Family::QpUnconstrained)).unwrap();
        let path = dir.path().join("trace.csv");
        t.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iter,running_empirical,running_cov,analytic,residual_hat"));
        assert_eq!(text.lines().count(), 301);
        t.write_summary(dir.path().join("s.json")).unwrap();
    }
}
