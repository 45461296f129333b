//! Rolling-window Markowitz experiment: forecast regret from the window
//! covariance against realized regret one month later.
//!
//! Costs are negated returns. For a portfolio with window mean cost `m` and
//! shrunk covariance `S`, decisions are `pi(c) = -(S + lambda I)^{-1} c`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::estimators::mean;
use crate::prob::Seed;
use crate::problems::{dot, CountingOracle, DecisionOracle, DecisionVector, SolveStatus};
use crate::{par, Error, Result};

/// Month by ticker returns; `NaN` marks a missing observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    pub months: Vec<String>,
    pub tickers: Vec<String>,
    pub returns: DMatrix<f64>,
    pub price: Option<DMatrix<f64>>,
    pub mktcap: Option<DMatrix<f64>>,
}

impl ReturnsPanel {
    pub fn n_months(&self) -> usize {
        self.months.len()
    }

    pub fn n_tickers(&self) -> usize {
        self.tickers.len()
    }

    /// Long format `date,ticker,ret[,price,mktcap]`, missing cells skipped.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date", "ticker", "ret"];
        if self.price.is_some() {
            header.push("price");
        }
        if self.mktcap.is_some() {
            header.push("mktcap");
        }
        w.write_record(&header)?;
        for (t, month) in self.months.iter().enumerate() {
            for (j, tic) in self.tickers.iter().enumerate() {
                let r = self.returns[(t, j)];
                if r.is_nan() {
                    continue;
                }
                let mut rec = vec![month.clone(), tic.clone(), r.to_string()];
                for m in [&self.price, &self.mktcap].into_iter().flatten() {
                    rec.push(m[(t, j)].to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Returns strictly below are dropped.
    pub ret_floor: f64,
    /// Returns strictly above are dropped.
    pub ret_cap: f64,
    /// Market caps strictly below are dropped, in dollars.
    pub min_mktcap: f64,
    /// Minimum run of consecutive months per ticker.
    pub history_min: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            ret_floor: -1.0,
            ret_cap: 10.0,
            min_mktcap: 5e6,
            history_min: 60,
        }
    }
}

/// Rows removed by each rule, applied in the order listed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub rows_read: usize,
    pub duplicate: usize,
    pub missing_return: usize,
    pub below_return_floor: usize,
    pub above_return_cap: usize,
    pub nonpositive_price: usize,
    pub below_min_mktcap: usize,
    /// Observations outside each ticker's longest consecutive run, or of
    /// tickers whose longest run is too short.
    pub short_history_rows: usize,
    pub short_history_tickers: usize,
    pub rows_kept: usize,
}

impl FilterReport {
    pub fn rows_dropped(&self) -> usize {
        self.rows_read - self.rows_kept
    }
}

fn parse_opt(s: Option<&str>) -> Option<f64> {
    s.map(str::trim)
        .filter(|s| !s.is_empty())
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

/// Reads `date,ticker,ret[,price,mktcap]` and applies the return, price,
/// market cap and history filters.
pub fn load_and_filter(
    path: impl AsRef<Path>,
    cfg: &FilterConfig,
) -> Result<(ReturnsPanel, FilterReport)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let (Some(ic_date), Some(ic_tic), Some(ic_ret)) = (col("date"), col("ticker"), col("ret")) else {
        return Err(Error::Schema(format!(
            "expected columns date,ticker,ret[,price,mktcap], found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    };
    let ic_price = col("price");
    let ic_cap = col("mktcap");

    let mut rep = FilterReport::default();
    // (ticker, date) -> (ret, price, cap)
    let mut kept: BTreeMap<(String, String), (f64, f64, f64)> = BTreeMap::new();
    let mut all_months = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        rep.rows_read += 1;
        let date = rec.get(ic_date).unwrap_or("").trim().to_string();
        let tic = rec.get(ic_tic).unwrap_or("").trim().to_string();
        if date.is_empty() || tic.is_empty() {
            return Err(Error::Schema(format!("row {} lacks a date or ticker", rep.rows_read)));
        }
        all_months.insert(date.clone());
        let key = (tic, date);
        if kept.contains_key(&key) {
            rep.duplicate += 1;
            continue;
        }
        let Some(r) = parse_opt(rec.get(ic_ret)) else {
            rep.missing_return += 1;
            continue;
        };
        if r < cfg.ret_floor {
            rep.below_return_floor += 1;
            continue;
        }
        if r > cfg.ret_cap {
            rep.above_return_cap += 1;
            continue;
        }
        let price = ic_price.and_then(|i| parse_opt(rec.get(i))).unwrap_or(f64::NAN);
        if price <= 0.0 {
            rep.nonpositive_price += 1;
            continue;
        }
        let cap = ic_cap.and_then(|i| parse_opt(rec.get(i))).unwrap_or(f64::NAN);
        if cap < cfg.min_mktcap {
            rep.below_min_mktcap += 1;
            continue;
        }
        kept.insert(key, (r, price, cap));
    }

    let months: Vec<String> = all_months.into_iter().collect();
    let month_idx: HashMap<&str, usize> =
        months.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
    let mut by_ticker: BTreeMap<&str, Vec<(usize, (f64, f64, f64))>> = BTreeMap::new();
    for ((tic, date), v) in &kept {
        by_ticker.entry(tic).or_default().push((month_idx[date.as_str()], *v));
    }

    let mut tickers = Vec::new();
    let mut columns = Vec::new();
    for (tic, mut obs) in by_ticker {
        obs.sort_by_key(|o| o.0);
        // longest run of consecutive panel months, earliest on ties
        let (mut best, mut start) = ((0, 0), 0);
        for k in 1..=obs.len() {
            if k == obs.len() || obs[k].0 != obs[k - 1].0 + 1 {
                if k - start > best.1 - best.0 {
                    best = (start, k);
                }
                start = k;
            }
        }
        let run = best.1 - best.0;
        if run < cfg.history_min {
            rep.short_history_tickers += 1;
            rep.short_history_rows += obs.len();
            continue;
        }
        rep.short_history_rows += obs.len() - run;
        tickers.push(tic.to_string());
        columns.push(obs[best.0..best.1].to_vec());
    }
    if tickers.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    let (t, n) = (months.len(), tickers.len());
    let mut returns = DMatrix::from_element(t, n, f64::NAN);
    let mut price = DMatrix::from_element(t, n, f64::NAN);
    let mut mktcap = DMatrix::from_element(t, n, f64::NAN);
    for (j, obs) in columns.iter().enumerate() {
        for &(i, (r, p, c)) in obs {
            returns[(i, j)] = r;
            price[(i, j)] = p;
            mktcap[(i, j)] = c;
        }
    }
    rep.rows_kept = columns.iter().map(Vec::len).sum();
    Ok((
        ReturnsPanel {
            months,
            tickers,
            returns,
            price: ic_price.map(|_| price),
            mktcap: ic_cap.map(|_| mktcap),
        },
        rep,
    ))
}

/// Factor-model panel `r = a + B f + e` with monthly factor returns
/// `f ~ N(0.01, 0.04^2)`, loadings `B ~ N(1, 0.3^2) / sqrt(k)`, alpha 0.002
/// and idiosyncratic volatility uniform on `[0.04, 0.12]`. Returns are
/// clamped to `[-0.95, 5]`. No price or market cap columns.
pub fn synthetic_returns(
    n_stocks: usize,
    months: usize,
    factor_count: usize,
    seed: Seed,
) -> Result<ReturnsPanel> {
    if n_stocks == 0 || months == 0 {
        return Err(Error::invalid("synthetic panel needs at least one stock and one month"));
    }
    let mut rng = seed.rng();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let k = factor_count;
    let kscale = (k.max(1) as f64).sqrt();
    let loadings = DMatrix::from_fn(n_stocks, k, |_, _| (1.0 + 0.3 * normal()) / kscale);
    let factors = DMatrix::from_fn(months, k, |_, _| 0.01 + 0.04 * normal());
    let mut rng = seed.stream(1);
    let vol: Vec<f64> = (0..n_stocks).map(|_| rng.random_range(0.04..0.12)).collect();
    let mut returns = DMatrix::zeros(months, n_stocks);
    for t in 0..months {
        for i in 0..n_stocks {
            let sys: f64 = (0..k).map(|f| loadings[(i, f)] * factors[(t, f)]).sum();
            let e: f64 = StandardNormal.sample(&mut rng);
            returns[(t, i)] = (0.002 + sys + vol[i] * e).clamp(-0.95, 5.0);
        }
    }
    Ok(ReturnsPanel {
        months: (0..months)
            .map(|t| format!("{:04}-{:02}", 2000 + t / 12, t % 12 + 1))
            .collect(),
        tickers: (0..n_stocks).map(|i| format!("S{i:05}")).collect(),
        returns,
        price: None,
        mktcap: None,
    })
}

/// Linear shrinkage of the sample covariance toward `nu I`, `nu` the mean
/// sample variance, with the Ledoit-Wolf intensity. Rows of `x` are
/// observations. Returns the estimate and the intensity.
pub fn ledoit_wolf(x: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let (n, p) = x.shape();
    let means = x.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &means;
    }
    let s = xc.transpose() * &xc / n as f64;
    let nu = s.trace() / p as f64;
    let mut target_gap = s.clone();
    for i in 0..p {
        target_gap[(i, i)] -= nu;
    }
    let d2 = target_gap.norm_squared();
    if d2 <= 0.0 {
        return (s, 0.0);
    }
    let s_norm2 = s.norm_squared();
    let mut b2 = 0.0;
    for row in xc.row_iter() {
        let r = row.transpose();
        let rr = r.norm_squared();
        let rsr = (r.transpose() * &s * &r)[(0, 0)];
        b2 += rr * rr - 2.0 * rsr + s_norm2;
    }
    b2 /= (n * n) as f64;
    let delta = (b2.min(d2) / d2).clamp(0.0, 1.0);
    let mut est = s * (1.0 - delta);
    for i in 0..p {
        est[(i, i)] += delta * nu;
    }
    (est, delta)
}

/// Unconstrained Markowitz decision map `c -> -(S + lambda I)^{-1} c` with
/// objective `c'z + z'(S + lambda I)z / 2`.
struct Markowitz {
    chol: Cholesky<f64, Dyn>,
}

impl DecisionOracle for Markowitz {
    fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    fn solve(&self, c: &[f64]) -> Result<DecisionVector> {
        let rhs = nalgebra::DVector::from_column_slice(c);
        let z: Vec<f64> = (-self.chol.solve(&rhs)).iter().copied().collect();
        Ok(DecisionVector {
            objective: 0.5 * dot(c, &z),
            z,
            status: SolveStatus::Optimal,
        })
    }

    fn feasibility_residual(&self, _z: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    pub window_months: usize,
    pub portfolios_per_month: usize,
    pub stocks_per_portfolio: usize,
    pub lambda: f64,
    pub seed: Seed,
}

impl RollingConfig {
    pub fn new(seed: Seed) -> Self {
        RollingConfig {
            window_months: 36,
            portfolios_per_month: 100,
            stocks_per_portfolio: 50,
            lambda: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_months < 12 {
            return Err(Error::invalid("window must be at least 12 months"));
        }
        if self.portfolios_per_month == 0 || self.stocks_per_portfolio == 0 {
            return Err(Error::invalid("portfolio counts must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthResult {
    /// Month whose returns are realized.
    pub month: String,
    pub forecast_regret_mean: f64,
    /// `c'pi(c) - c'pi(m)` at the realized cost, averaged over portfolios.
    pub realized_regret_mean: f64,
    /// Same comparison on the full quadratic objective, which is never
    /// positive.
    pub realized_objective_gap_mean: f64,
    pub gap: f64,
    pub universe: usize,
    pub shrinkage_mean: f64,
    /// Decision-oracle calls made by the forecast path.
    pub forecast_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingSummary {
    pub config: RollingConfig,
    pub months: usize,
    pub skipped_months: usize,
    pub forecast_regret_mean: f64,
    pub realized_regret_mean: f64,
    pub mean_abs_gap: f64,
    pub forecast_solves: usize,
    pub realized_solves: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingResult {
    pub months: Vec<MonthResult>,
    pub summary: RollingSummary,
}

impl RollingResult {
    /// `month, forecast_regret_mean, realized_regret_mean, gap`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["month", "forecast_regret_mean", "realized_regret_mean", "gap"])?;
        for m in &self.months {
            w.write_record([
                m.month.clone(),
                m.forecast_regret_mean.to_string(),
                m.realized_regret_mean.to_string(),
                m.gap.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.summary)?;
        std::fs::write(path, s)?;
        Ok(())
    }
}

struct PortfolioOutcome {
    forecast: f64,
    realized: f64,
    objective_gap: f64,
    shrinkage: f64,
    forecast_solves: usize,
    realized_solves: usize,
}

fn evaluate_portfolio(
    window: &DMatrix<f64>,
    next: &[f64],
    lambda: f64,
) -> Result<PortfolioOutcome> {
    let p = window.ncols();
    let (sigma, shrinkage) = ledoit_wolf(window);
    let mut h = sigma.clone();
    for i in 0..p {
        h[(i, i)] += lambda;
    }
    let chol = h.clone().cholesky().ok_or(Error::SingularWindowCovariance)?;
    // -tr(H^{-1} S); the shrunk S may be only semidefinite, which rules out
    // building a CovMatrix from it
    let forecast = -chol.solve(&sigma).trace();
    let oracle = CountingOracle::new(Markowitz { chol });
    let forecast_solves = oracle.calls();

    let m: Vec<f64> = window.row_mean().iter().map(|r| -r).collect();
    let c: Vec<f64> = next.iter().map(|r| -r).collect();
    let at_mean = oracle.solve(&m)?.z;
    let own = oracle.solve(&c)?.z;
    let realized = dot(&c, &own) - dot(&c, &at_mean);
    let quad = |z: &[f64]| {
        let v = nalgebra::DVector::from_column_slice(z);
        dot(&c, z) + 0.5 * (v.transpose() * &h * &v)[(0, 0)]
    };
    Ok(PortfolioOutcome {
        forecast,
        realized,
        objective_gap: quad(&own) - quad(&at_mean),
        shrinkage,
        forecast_solves,
        realized_solves: oracle.calls() - forecast_solves,
    })
}

/// For each month `t` with a full trailing window ending at `t` and data at
/// `t + 1`, draws portfolios with replacement from the tickers observed on
/// all those months, forecasts regret from the shrunk window covariance and
/// realizes it at `t + 1`. Repeated draws of a ticker are collapsed.
pub fn rolling_regret_experiment(panel: &ReturnsPanel, cfg: &RollingConfig) -> Result<RollingResult> {
    cfg.validate()?;
    let (t_total, n) = panel.returns.shape();
    let w = cfg.window_months;
    if t_total <= w + 1 {
        return Err(Error::InsufficientSamples {
            needed: w + 2,
            got: t_total,
        });
    }
    let mut months = Vec::new();
    let mut skipped = 0;
    let mut realized_solves = 0;
    for t in (w - 1)..(t_total - 1) {
        let lo = t + 1 - w;
        let universe: Vec<usize> = (0..n)
            .filter(|&j| (lo..=t + 1).all(|i| panel.returns[(i, j)].is_finite()))
            .collect();
        if universe.is_empty() {
            skipped += 1;
            continue;
        }
        let mut rng = cfg.seed.stream(t as u64);
        let members: Vec<Vec<usize>> = (0..cfg.portfolios_per_month)
            .map(|_| {
                let picks: BTreeSet<usize> = (0..cfg.stocks_per_portfolio)
                    .map(|_| universe[rng.random_range(0..universe.len())])
                    .collect();
                picks.into_iter().collect()
            })
            .collect();
        let outcomes = par::try_map_indexed(members.len(), |k| {
            let cols = &members[k];
            let window = DMatrix::from_fn(w, cols.len(), |i, j| panel.returns[(lo + i, cols[j])]);
            let next: Vec<f64> = cols.iter().map(|&j| panel.returns[(t + 1, j)]).collect();
            evaluate_portfolio(&window, &next, cfg.lambda)
        })?;
        let avg = |f: fn(&PortfolioOutcome) -> f64| mean(&outcomes.iter().map(f).collect::<Vec<_>>());
        let forecast = avg(|o| o.forecast);
        let realized = avg(|o| o.realized);
        realized_solves += outcomes.iter().map(|o| o.realized_solves).sum::<usize>();
        months.push(MonthResult {
            month: panel.months[t + 1].clone(),
            forecast_regret_mean: forecast,
            realized_regret_mean: realized,
            realized_objective_gap_mean: avg(|o| o.objective_gap),
            gap: realized - forecast,
            universe: universe.len(),
            shrinkage_mean: avg(|o| o.shrinkage),
            forecast_solves: outcomes.iter().map(|o| o.forecast_solves).sum(),
        });
    }
    if months.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    let col = |f: fn(&MonthResult) -> f64| mean(&months.iter().map(f).collect::<Vec<_>>());
    let summary = RollingSummary {
        config: cfg.clone(),
        months: months.len(),
        skipped_months: skipped,
        forecast_regret_mean: col(|m| m.forecast_regret_mean),
        realized_regret_mean: col(|m| m.realized_regret_mean),
        mean_abs_gap: col(|m| m.gap.abs()),
        forecast_solves: months.iter().map(|m| m.forecast_solves).sum(),
        realized_solves,
    };
    Ok(RollingResult { months, summary })
}
