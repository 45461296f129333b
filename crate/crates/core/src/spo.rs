//! SPO+ training of a rectified linear cost predictor over a grid
//! shortest-path LP, with covariance and SAA validation oracles.
//!
//! The covariance oracle reads only the cached validation pairs
//! `(c_i, pi(c_i))` and never solves. The SAA oracle solves once, at the
//! model's mean prediction over the validation contexts.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::estimators::{cov_regret_streaming, mean, sample_sd, CovOptions};
use crate::prob::{SampleMatrix, Seed};
use crate::problems::{build_grid_lp, dot, DecisionOracle, LpInstance};
use crate::{par, Error, Result};

const COST_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpoDataConfig {
    /// Context dimension.
    pub p: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// `(train, val, test)` sizes.
    pub sizes: (usize, usize, usize),
    pub noise_sd: f64,
    /// Entries of the true weights are `N(0, w_star_scale^2)`.
    pub w_star_scale: f64,
    pub seed: Seed,
}

impl SpoDataConfig {
    pub fn new(seed: Seed) -> Self {
        SpoDataConfig {
            p: 10,
            grid_rows: 4,
            grid_cols: 4,
            sizes: (200, 100, 100),
            noise_sd: 0.3,
            w_star_scale: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Contexts, costs and cached hindsight decisions, stored train, val, test
/// in that order.
#[derive(Debug, Clone)]
pub struct SpoDataset {
    pub contexts: SampleMatrix,
    pub costs: SampleMatrix,
    pub decisions: SampleMatrix,
    pub sizes: (usize, usize, usize),
    pub w_star: DMatrix<f64>,
    pub lp: LpInstance,
}

/// Rows of one split.
pub struct SplitView {
    pub contexts: SampleMatrix,
    pub costs: SampleMatrix,
    pub decisions: SampleMatrix,
}

impl SpoDataset {
    pub fn n_edges(&self) -> usize {
        self.costs.n_cols()
    }

    pub fn p(&self) -> usize {
        self.contexts.n_cols()
    }

    pub fn split(&self, which: Split) -> SplitView {
        let (tr, va, te) = self.sizes;
        let range: Vec<usize> = match which {
            Split::Train => (0..tr).collect(),
            Split::Val => (tr..tr + va).collect(),
            Split::Test => (tr + va..tr + va + te).collect(),
        };
        SplitView {
            contexts: self.contexts.select_rows(&range),
            costs: self.costs.select_rows(&range),
            decisions: self.decisions.select_rows(&range),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `c_i = sigmoid(x_i W*) + eps_i`, clipped at `1e-2`, with `x_i ~ N(0, I_p)`
/// and `eps_i ~ N(0, noise_sd^2 I)`. Hindsight paths are solved and cached.
pub fn generate_spo_data(cfg: &SpoDataConfig) -> Result<SpoDataset> {
    if cfg.p == 0 {
        return Err(Error::invalid("context dimension must be at least 1"));
    }
    if !(cfg.noise_sd >= 0.0) {
        return Err(Error::invalid("noise_sd must be >= 0"));
    }
    let (_, lp) = build_grid_lp(cfg.grid_rows, cfg.grid_cols)?;
    let d = lp.n_vars();
    let p = cfg.p;
    let n = cfg.sizes.0 + cfg.sizes.1 + cfg.sizes.2;
    if n == 0 {
        return Err(Error::invalid("dataset would be empty"));
    }
    let mut wrng = cfg.seed.stream(0);
    let w_star = DMatrix::from_fn(p, d, |_, _| {
        cfg.w_star_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut wrng)
    });
    let mut rng = cfg.seed.stream(1);
    let mut contexts = SampleMatrix::zeros(n, p);
    let mut costs = SampleMatrix::zeros(n, d);
    for i in 0..n {
        for v in contexts.row_mut(i) {
            *v = StandardNormal.sample(&mut rng);
        }
        let x = contexts.row(i).to_vec();
        let c = costs.row_mut(i);
        for (e, ce) in c.iter_mut().enumerate() {
            let lin: f64 = (0..p).map(|k| x[k] * w_star[(k, e)]).sum();
            let eps: f64 = StandardNormal.sample(&mut rng);
            *ce = (sigmoid(lin) + cfg.noise_sd * eps).max(COST_FLOOR);
        }
    }
    let sols = par::try_map_indexed(n, |i| lp.solve(costs.row(i)).map(|s| s.z))?;
    let decisions = SampleMatrix::from_rows(&sols)?;
    Ok(SpoDataset {
        contexts,
        costs,
        decisions,
        sizes: cfg.sizes,
        w_star,
        lp,
    })
}

/// SPO+ loss `c'z(2 c_hat - c) - c'z_star` and subgradient
/// `2 z(2 c_hat - c)` with respect to `c_hat`. One auxiliary solve.
pub fn spo_plus_loss_and_subgradient<O: DecisionOracle + ?Sized>(
    c_hat: &[f64],
    c: &[f64],
    z_star: &[f64],
    oracle: &O,
) -> Result<(f64, Vec<f64>)> {
    let aux: Vec<f64> = c_hat.iter().zip(c).map(|(h, c)| 2.0 * h - c).collect();
    let z = oracle.solve(&aux)?.z;
    let loss = dot(c, &z) - dot(c, z_star);
    let grad = z.iter().map(|v| 2.0 * v).collect();
    Ok((loss, grad))
}

const STACK_DIM: usize = 64;

/// Covariance oracle: sample covariance (`1/n`) of the cached validation
/// pairs. Zero solves, and no allocation for up to 64 edges.
pub fn validation_oracle_cov(costs: &SampleMatrix, decisions: &SampleMatrix) -> Result<f64> {
    let (n, d) = (costs.n_rows(), costs.n_cols());
    if decisions.n_rows() != n || decisions.n_cols() != d {
        return Err(Error::dim("cost and decision matrices differ in shape"));
    }
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if d > STACK_DIM {
        return cov_regret_streaming(costs.rows().zip(decisions.rows()), CovOptions::default())
            .map(|r| r.0);
    }
    let (c, z) = (costs.as_slice(), decisions.as_slice());
    let (c0, z0) = (&c[..d], &z[..d]);
    let mut sum_c = [0.0; STACK_DIM];
    let mut sum_z = [0.0; STACK_DIM];
    // per-coordinate cross sums keep the inner loop free of a serial chain
    let mut sum_cz = [0.0; STACK_DIM];
    let (sc, sz, scz) = (&mut sum_c[..d], &mut sum_z[..d], &mut sum_cz[..d]);
    for i in 1..n {
        let ci = &c[i * d..i * d + d];
        let zi = &z[i * d..i * d + d];
        for k in 0..d {
            let dc = ci[k] - c0[k];
            let dz = zi[k] - z0[k];
            sc[k] += dc;
            sz[k] += dz;
            scz[k] += dc * dz;
        }
    }
    let nf = n as f64;
    Ok(scz.iter().sum::<f64>() / nf - dot(sc, sz) / (nf * nf))
}

/// SAA oracle: draws `scenario_count` validation rows with replacement and
/// returns `(1/B) sum c_i'z_i - (1/B) sum c_i'pi(plan)`. `plan` defaults to
/// the mean of the drawn costs. One solve.
pub fn validation_oracle_saa<O: DecisionOracle + ?Sized>(
    costs: &SampleMatrix,
    decisions: &SampleMatrix,
    oracle: &O,
    scenario_count: usize,
    plan: Option<&[f64]>,
    seed: Seed,
) -> Result<f64> {
    let n = costs.n_rows();
    if n == 0 || scenario_count == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut rng = seed.rng();
    let idx: Vec<usize> = (0..scenario_count).map(|_| rng.random_range(0..n)).collect();
    let plan_cost = match plan {
        Some(p) => p.to_vec(),
        None => costs.select_rows(&idx).column_means(),
    };
    let z_plan = oracle.solve(&plan_cost)?.z;
    let b = scenario_count as f64;
    let mut own = 0.0;
    let mut planned = 0.0;
    for &i in &idx {
        let c = costs.row(i);
        own += dot(c, decisions.row(i));
        planned += dot(c, &z_plan);
    }
    Ok(own / b - planned / b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "oracle")]
pub enum ValidationOracle {
    Cov,
    Saa { scenario_count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub oracle: ValidationOracle,
    pub seed: Seed,
}

impl TrainConfig {
    pub fn new(oracle: ValidationOracle, seed: Seed) -> Self {
        TrainConfig {
            lr: 5e-3,
            batch: 16,
            epochs: 20,
            eval_every: 2,
            oracle,
            seed,
        }
    }
}

/// Predictor `c_hat(x) = max(0, x W)` with Adam state.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    pub w: DMatrix<f64>,
    m: DMatrix<f64>,
    v: DMatrix<f64>,
    step: u64,
    pub epoch: usize,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl PredictorState {
    /// `W ~ N(0, 1/p)`.
    pub fn init(p: usize, d: usize, seed: Seed) -> Self {
        let mut rng = seed.rng();
        let sd = 1.0 / (p as f64).sqrt();
        let w = DMatrix::from_fn(p, d, |_, _| {
            sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        PredictorState {
            m: DMatrix::zeros(p, d),
            v: DMatrix::zeros(p, d),
            w,
            step: 0,
            epoch: 0,
        }
    }

    /// Pre-activation `x W`.
    fn linear(&self, x: &[f64]) -> Vec<f64> {
        let (p, d) = self.w.shape();
        (0..d).map(|e| (0..p).map(|k| x[k] * self.w[(k, e)]).sum()).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.linear(x).into_iter().map(|v| v.max(0.0)).collect()
    }

    fn adam_step(&mut self, grad: &DMatrix<f64>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for k in 0..self.w.len() {
            let g = grad[k];
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * g;
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            self.w[k] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_regret_cov: Option<f64>,
    pub val_regret_saa: Option<f64>,
    pub val_ms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best: PredictorState,
    pub last: PredictorState,
    pub train_secs: f64,
    /// Total wall-clock spent inside validation oracle calls.
    pub val_overhead_secs: f64,
    pub val_calls: usize,
    /// Solves made by validation calls.
    pub val_solves: usize,
    /// Covariance estimate on the test pairs (independent of the model).
    pub test_regret_cov: f64,
    /// Mean of `c'(pi(c_hat) - z_star)` on the test split for the selected
    /// checkpoint.
    pub test_decision_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub oracle: ValidationOracle,
    pub train_secs: f64,
    pub val_overhead_secs: f64,
    pub val_calls: usize,
    pub val_solves: usize,
    pub best_epoch: usize,
    pub test_regret_cov_abs: f64,
    pub test_decision_regret: f64,
}

impl TrainResult {
    pub fn summary(&self, cfg: &TrainConfig) -> TrainSummary {
        TrainSummary {
            oracle: cfg.oracle,
            train_secs: self.train_secs,
            val_overhead_secs: self.val_overhead_secs,
            val_calls: self.val_calls,
            val_solves: self.val_solves,
            best_epoch: self.best_epoch,
            test_regret_cov_abs: self.test_regret_cov.abs(),
            test_decision_regret: self.test_decision_regret,
        }
    }

    /// `epoch, train_loss, val_regret_cov, val_regret_saa, val_ms`.
    pub fn write_log_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "val_regret_cov", "val_regret_saa", "val_ms"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.log {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                opt(r.val_regret_cov),
                opt(r.val_regret_saa),
                opt(r.val_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_prediction(state: &PredictorState, contexts: &SampleMatrix) -> Vec<f64> {
    let d = state.w.ncols();
    let mut acc = vec![0.0; d];
    for x in contexts.rows() {
        for (a, v) in acc.iter_mut().zip(state.predict(x)) {
            *a += v;
        }
    }
    let n = contexts.n_rows().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Trains with Adam on mini-batches; validation runs at the start of every
/// `eval_every`-th epoch and the checkpoint with the smallest |validation
/// regret| is selected (earliest on ties).
pub fn train_spo(data: &SpoDataset, cfg: &TrainConfig) -> Result<TrainResult> {
    if cfg.batch == 0 || cfg.eval_every == 0 {
        return Err(Error::invalid("batch and eval_every must be positive"));
    }
    if !(cfg.lr >= 0.0) {
        return Err(Error::invalid("learning rate must be >= 0"));
    }
    let lp = &data.lp;
    let train = data.split(Split::Train);
    let val = data.split(Split::Val);
    let test = data.split(Split::Test);
    if train.costs.n_rows() == 0 || val.costs.n_rows() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: val.costs.n_rows(),
        });
    }
    // refuse labels that are not hindsight optimal: SPO+ loss assumes them
    for i in 0..train.costs.n_rows() {
        let c = train.costs.row(i);
        let opt = lp.solve(c)?.objective;
        if dot(c, train.decisions.row(i)) > opt + 1e-8 * (1.0 + opt.abs()) {
            return Err(Error::invalid(format!("training label {i} is not optimal")));
        }
    }

    let start = Instant::now();
    let (p, d) = (data.p(), data.n_edges());
    let mut state = PredictorState::init(p, d, cfg.seed.derive(0));
    let mut order_rng = cfg.seed.derive(1).rng();
    let saa_seed = cfg.seed.derive(2);
    let mut order: Vec<usize> = (0..train.costs.n_rows()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, PredictorState)> = None;
    let (mut overhead, mut calls, mut solves) = (0.0, 0usize, 0usize);

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let mut entry = EpochLog {
            epoch,
            train_loss: 0.0,
            val_regret_cov: None,
            val_regret_saa: None,
            val_ms: None,
        };
        if epoch % cfg.eval_every == 0 {
            let t0 = Instant::now();
            let value = match cfg.oracle {
                ValidationOracle::Cov => {
                    let v = validation_oracle_cov(&val.costs, &val.decisions)?;
                    entry.val_regret_cov = Some(v);
                    v
                }
                ValidationOracle::Saa { scenario_count } => {
                    let plan = mean_prediction(&state, &val.contexts);
                    let v = validation_oracle_saa(
                        &val.costs,
                        &val.decisions,
                        lp,
                        scenario_count,
                        Some(&plan),
                        saa_seed,
                    )?;
                    solves += 1;
                    entry.val_regret_saa = Some(v);
                    v
                }
            };
            let secs = t0.elapsed().as_secs_f64();
            overhead += secs;
            calls += 1;
            entry.val_ms = Some(secs * 1e3);
            if best.as_ref().is_none_or(|(b, _, _)| value.abs() < *b) {
                best = Some((value.abs(), epoch, state.clone()));
            }
        }

        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut grad = DMatrix::zeros(p, d);
            for &i in chunk {
                let x = train.contexts.row(i);
                let pre = state.linear(x);
                let c_hat: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                let (loss, g) =
                    spo_plus_loss_and_subgradient(&c_hat, train.costs.row(i), train.decisions.row(i), lp)?;
                loss_sum += loss;
                // chain rule through the rectifier, zero branch at 0
                for e in 0..d {
                    if pre[e] > 0.0 {
                        for k in 0..p {
                            grad[(k, e)] += x[k] * g[e];
                        }
                    }
                }
            }
            grad /= chunk.len() as f64;
            state.adam_step(&grad, cfg.lr);
        }
        entry.train_loss = loss_sum / order.len() as f64;
        log.push(entry);
    }
    let train_secs = start.elapsed().as_secs_f64();
    let (_, best_epoch, best_state) = best.unwrap_or((0.0, 0, state.clone()));

    let test_regret_cov = if test.costs.n_rows() > 0 {
        validation_oracle_cov(&test.costs, &test.decisions)?
    } else {
        0.0
    };
    let per_test = par::try_map_indexed(test.costs.n_rows(), |i| {
        let c = test.costs.row(i);
        let z = lp.solve(&best_state.predict(test.contexts.row(i)))?.z;
        Ok::<_, Error>(dot(c, &z) - dot(c, test.decisions.row(i)))
    })?;
    Ok(TrainResult {
        log,
        best_epoch,
        best: best_state,
        last: state,
        train_secs,
        val_overhead_secs: overhead,
        val_calls: calls,
        val_solves: solves,
        test_regret_cov,
        test_decision_regret: mean(&per_test),
    })
}

/// Per-call latency of one oracle configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTiming {
    pub oracle: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_count: Option<usize>,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// SAA latency over covariance latency; absent for the covariance row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub timings: Vec<OracleTiming>,
    /// Covariance latency re-measured alongside each scenario count.
    pub cov_ms_by_scenario: Vec<(usize, f64)>,
    /// Coefficient of variation of `cov_ms_by_scenario`.
    pub cov_latency_cv: f64,
}

impl BenchReport {
    /// `oracle, scenario_count, latency_ms_mean, latency_ms_std, speedup`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["oracle", "scenario_count", "latency_ms_mean", "latency_ms_std", "speedup"])?;
        for t in &self.timings {
            w.write_record([
                t.oracle.clone(),
                t.scenario_count.map(|b| b.to_string()).unwrap_or_default(),
                t.mean_ms.to_string(),
                t.std_ms.to_string(),
                t.speedup.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const DEFAULT_SCENARIO_GRID: [usize; 6] = [10, 25, 50, 100, 200, 500];

/// Median and standard deviation over repetitions of the per-call latency,
/// each repetition averaging `calls` calls after one warm-up call.
fn time_calls<F: FnMut() -> Result<f64>>(
    repetitions: usize,
    calls: usize,
    mut f: F,
) -> Result<(f64, f64)> {
    std::hint::black_box(f()?);
    let mut per_rep = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t0 = Instant::now();
        for _ in 0..calls {
            std::hint::black_box(f()?);
        }
        per_rep.push(t0.elapsed().as_secs_f64() * 1e3 / calls as f64);
    }
    let sd = sample_sd(&per_rep);
    per_rep.sort_by(f64::total_cmp);
    let k = per_rep.len();
    let median = if k % 2 == 1 {
        per_rep[k / 2]
    } else {
        0.5 * (per_rep[k / 2 - 1] + per_rep[k / 2])
    };
    Ok((median, sd))
}

/// Times both oracles on the default 4x4 dataset, on the calling thread.
pub fn bench_oracles(scenario_counts: &[usize], repetitions: usize, seed: Seed) -> Result<BenchReport> {
    if repetitions < 2 {
        return Err(Error::invalid("at least 2 repetitions are needed"));
    }
    let data = generate_spo_data(&SpoDataConfig::new(seed))?;
    let val = data.split(Split::Val);
    let plan = val.costs.column_means();
    let cov_calls = 2000;
    let saa_calls = 50;

    let cov_once = || validation_oracle_cov(&val.costs, &val.decisions);
    let mut cov_by = Vec::new();
    let mut saa_rows = Vec::new();
    for (j, &b) in scenario_counts.iter().enumerate() {
        let (cm, _) = time_calls(repetitions, cov_calls, cov_once)?;
        cov_by.push((b, cm));
        let s = seed.derive(100 + j as u64);
        let (sm, ss) = time_calls(repetitions, saa_calls, || {
            validation_oracle_saa(&val.costs, &val.decisions, &data.lp, b, Some(&plan), s)
        })?;
        saa_rows.push((b, sm, ss));
    }
    let (cov_mean, cov_std) = time_calls(repetitions, cov_calls, cov_once)?;
    let mut timings = vec![OracleTiming {
        oracle: "cov".into(),
        scenario_count: None,
        mean_ms: cov_mean,
        std_ms: cov_std,
        speedup: None,
    }];
    for (b, sm, ss) in saa_rows {
        timings.push(OracleTiming {
            oracle: "saa".into(),
            scenario_count: Some(b),
            mean_ms: sm,
            std_ms: ss,
            speedup: Some(sm / cov_mean),
        });
    }
    let cms: Vec<f64> = cov_by.iter().map(|x| x.1).collect();
    let cv = if cms.len() >= 2 { sample_sd(&cms) / mean(&cms) } else { 0.0 };
    Ok(BenchReport {
        timings,
        cov_ms_by_scenario: cov_by,
        cov_latency_cv: cv,
    })
}
