//! `regret`: simulation, estimation, SPO training and portfolio runs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use regret_core::bounds::{clt_confidence_interval, GradientSource};
use regret_core::estimators::{
    corrected_regret, cov_regret, cov_regret_stderr, residual_estimator, saa_regret, Resampling,
};
use regret_core::portfolio::{
    load_and_filter, rolling_regret_experiment, synthetic_returns, FilterConfig, RollingConfig,
};
use regret_core::problems::{ProblemSpec, ProblemType};
use regret_core::replication::{run_experiment, BenchmarkMean, ExperimentConfig, Family};
use regret_core::spo::{
    bench_oracles, generate_spo_data, train_spo, SpoDataConfig, TrainConfig, ValidationOracle,
    DEFAULT_SCENARIO_GRID,
};
use regret_core::{par, Error, MeanMode, Method, RegretEstimate, SamplePairs, Seed};
use serde_json::json;

#[derive(Parser)]
#[command(name = "regret", version, about = "Covariance-based regret estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Output {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded convergence experiment and write its trace.
    Simulate(SimulateArgs),
    /// Estimate regret from an archive of (cost, decision) pairs.
    Estimate(EstimateArgs),
    /// SPO+ training and validation-oracle benchmarking.
    Spo {
        #[command(subcommand)]
        command: SpoCommand,
    },
    /// Rolling-window Markowitz experiment.
    Portfolio {
        #[command(subcommand)]
        command: PortfolioCommand,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum FamilyArg {
    Lp,
    Qp,
    QpCon,
    Knapsack,
}

#[derive(Copy, Clone, ValueEnum)]
enum MeanModeArg {
    Known,
    Estimated,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    family: FamilyArg,
    #[arg(long, default_value_t = 10)]
    n_vars: usize,
    #[arg(long, default_value_t = 5)]
    n_cons: usize,
    #[arg(long, default_value_t = 5000)]
    iters: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MeanModeArg::Known)]
    mean_mode: MeanModeArg,
    #[command(flatten)]
    output: Output,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Cov,
    Saa,
    Residual,
    Corrected,
    Ci,
}

#[derive(Args)]
struct EstimateArgs {
    /// Pairs CSV with header `c_0..c_{d-1},z_0..z_{d-1}`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Cov)]
    method: MethodArg,
    /// Problem spec JSON; needed by every method except `cov`.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Known mean cost, comma separated; the sample mean otherwise.
    #[arg(long, value_delimiter = ',')]
    mean: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// SAA scenario count; defaults to the archive size.
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum SpoCommand {
    Train(SpoTrainArgs),
    Bench(SpoBenchArgs),
}

#[derive(Copy, Clone, ValueEnum)]
enum OracleArg {
    Cov,
    Saa,
}

#[derive(Args)]
struct SpoTrainArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OracleArg::Cov)]
    oracle: OracleArg,
    /// SAA scenario count.
    #[arg(long, default_value_t = 200)]
    scenarios: usize,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 2)]
    eval_every: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 4)]
    grid_rows: usize,
    #[arg(long, default_value_t = 4)]
    grid_cols: usize,
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    #[arg(long, default_value_t = 100)]
    n_val: usize,
    #[arg(long, default_value_t = 100)]
    n_test: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_sd: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct SpoBenchArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, value_delimiter = ',')]
    scenarios: Option<Vec<usize>>,
    #[command(flatten)]
    output: Output,
}

#[derive(Subcommand)]
enum PortfolioCommand {
    Run(PortfolioArgs),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["csv", "synthetic"])))]
struct PortfolioArgs {
    /// Returns CSV `date,ticker,ret[,price,mktcap]`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Use the factor-model generator instead of a CSV.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 36)]
    window: usize,
    #[arg(long, default_value_t = 100)]
    portfolios: usize,
    #[arg(long, default_value_t = 50)]
    stocks: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 500)]
    n_stocks: usize,
    #[arg(long, default_value_t = 120)]
    months: usize,
    #[arg(long, default_value_t = 3)]
    factors: usize,
    #[arg(long, default_value_t = 60)]
    history_min: usize,
    #[command(flatten)]
    output: Output,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: err.into() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Schema(_)
            | Error::InvalidArgument(_)
            | Error::Dimension(_)
            | Error::InsufficientSamples { .. }
            | Error::EmptyUniverse
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            _ => 1,
        };
        Failure { code, err: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure { code: 1, err }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn prepare(out: &Path) -> CliResult {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(usage)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let s = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    fs::write(path, s).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult {
    let family = match a.family {
        FamilyArg::Lp => Family::Lp,
        FamilyArg::Qp => Family::QpUnconstrained,
        FamilyArg::QpCon => Family::QpConstrained,
        FamilyArg::Knapsack => Family::Knapsack,
    };
    let mut cfg = ExperimentConfig::new(family, Seed(a.seed));
    cfg.n_vars = a.n_vars;
    cfg.n_constraints = a.n_cons;
    cfg.iterations = a.iters;
    cfg.lambda = a.lambda;
    cfg.mean_mode = match a.mean_mode {
        MeanModeArg::Known => BenchmarkMean::Known,
        MeanModeArg::Estimated => BenchmarkMean::Estimated,
    };
    cfg.validate()?;
    prepare(&a.output.out)?;
    let trace = run_experiment(&cfg)?;
    let stem = format!("simulate_{}", serde_json::to_value(family).unwrap().as_str().unwrap());
    match a.output.format {
        Format::Csv => {
            trace.write_csv(a.output.out.join(format!("{stem}_trace.csv")))?;
            trace.write_summary(a.output.out.join(format!("{stem}_summary.json")))?;
            trace.pairs.write_csv(a.output.out.join(format!("{stem}_pairs.csv")))?;
        }
        Format::Json => write_json(
            &a.output.out.join(format!("{stem}_trace.json")),
            &json!({ "summary": trace.summary, "rows": trace.rows }),
        )?,
    }
    let s = &trace.summary;
    println!(
        "{}",
        json!({
            "empirical": s.empirical,
            "covariance": s.covariance,
            "relative_gap": s.relative_gap,
            "analytic": s.analytic,
        })
    );
    Ok(())
}

fn estimate(a: EstimateArgs) -> CliResult {
    let mean_mode = match &a.mean {
        Some(m) => MeanMode::Known(m.clone()),
        None => MeanMode::Estimated,
    };
    let pairs = SamplePairs::read_csv(&a.pairs, mean_mode)?;
    let problem = match &a.problem {
        Some(p) => {
            let s = fs::read_to_string(p)
                .with_context(|| format!("cannot read {}", p.display()))
                .map_err(usage)?;
            Some(ProblemSpec::from_json(&s)?)
        }
        None if a.method != MethodArg::Cov => {
            return Err(usage(anyhow::anyhow!("--method needs a solver; pass --problem")));
        }
        None => None,
    };
    let oracle = problem.as_ref().map(ProblemSpec::build).transpose()?;
    let out = match (a.method, oracle) {
        (MethodArg::Cov, _) => {
            let mut e = cov_regret(&pairs);
            e.stderr = Some(cov_regret_stderr(&pairs));
            serde_json::to_value(e)
        }
        (MethodArg::Saa, Some(o)) => {
            let b = a.scenarios.unwrap_or(pairs.len());
            let resampling = if b > pairs.len() {
                Resampling::WithReplacement
            } else {
                Resampling::WithoutReplacement
            };
            serde_json::to_value(saa_regret(&pairs.costs, &o, b, Seed(a.seed), resampling)?)
        }
        (MethodArg::Residual, Some(o)) => {
            let mut e = RegretEstimate::new(residual_estimator(&pairs, &o)?, Method::Residual, pairs.len());
            e.solves = Some(1);
            serde_json::to_value(e)
        }
        (MethodArg::Corrected, Some(o)) => serde_json::to_value(corrected_regret(&pairs, &o)?),
        (MethodArg::Ci, Some(o)) => {
            let grad = match problem.as_ref().map(|p| p.kind) {
                Some(ProblemType::Qp) => GradientSource::FiniteDifference,
                _ => GradientSource::Zero,
            };
            serde_json::to_value(clt_confidence_interval(&pairs, &o, &grad, a.level)?)
        }
        (_, None) => unreachable!("solver presence checked above"),
    }
    .map_err(anyhow::Error::from)?;
    println!("{}", serde_json::to_string_pretty(&out).map_err(anyhow::Error::from)?);
    Ok(())
}

fn spo_train(a: SpoTrainArgs) -> CliResult {
    let data_cfg = SpoDataConfig {
        p: a.p,
        grid_rows: a.grid_rows,
        grid_cols: a.grid_cols,
        sizes: (a.n_train, a.n_val, a.n_test),
        noise_sd: a.noise_sd,
        ..SpoDataConfig::new(Seed(a.seed))
    };
    let oracle = match a.oracle {
        OracleArg::Cov => ValidationOracle::Cov,
        OracleArg::Saa => ValidationOracle::Saa { scenario_count: a.scenarios },
    };
    let cfg = TrainConfig {
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        eval_every: a.eval_every,
        ..TrainConfig::new(oracle, Seed(a.seed).derive(1))
    };
    if cfg.epochs == 0 {
        return Err(usage(anyhow::anyhow!("--epochs must be at least 1")));
    }
    prepare(&a.output.out)?;
    let data = generate_spo_data(&data_cfg)?;
    let res = train_spo(&data, &cfg)?;
    let summary = res.summary(&cfg);
    match a.output.format {
        Format::Csv => {
            res.write_log_csv(a.output.out.join("spo_train_log.csv"))?;
            write_json(&a.output.out.join("spo_train_summary.json"), &summary)?;
        }
        Format::Json => write_json(
            &a.output.out.join("spo_train.json"),
            &json!({ "summary": summary, "log": res.log }),
        )?,
    }
    println!("{}", serde_json::to_string(&summary).map_err(anyhow::Error::from)?);
    Ok(())
}

fn spo_bench(a: SpoBenchArgs) -> CliResult {
    let grid = a.scenarios.unwrap_or_else(|| DEFAULT_SCENARIO_GRID.to_vec());
    if grid.is_empty() || grid.contains(&0) {
        return Err(usage(anyhow::anyhow!("scenario counts must be positive")));
    }
    prepare(&a.output.out)?;
    let report = bench_oracles(&grid, a.reps, Seed(a.seed))?;
    match a.output.format {
        Format::Csv => report.write_csv(a.output.out.join("spo_bench.csv"))?,
        Format::Json => write_json(&a.output.out.join("spo_bench.json"), &report)?,
    }
    for t in &report.timings {
        println!("{}", serde_json::to_string(t).map_err(anyhow::Error::from)?);
    }
    Ok(())
}

fn portfolio(a: PortfolioArgs) -> CliResult {
    let mut filter_report = None;
    let panel = match (&a.csv, a.synthetic) {
        (Some(path), false) => {
            if !path.is_file() {
                return Err(usage(anyhow::anyhow!("no such file: {}", path.display())));
            }
            let cfg = FilterConfig {
                history_min: a.history_min,
                ..FilterConfig::default()
            };
            let (panel, rep) = load_and_filter(path, &cfg)?;
            filter_report = Some(rep);
            panel
        }
        (None, true) => synthetic_returns(a.n_stocks, a.months, a.factors, Seed(a.seed).derive(0))?,
        _ => return Err(usage(anyhow::anyhow!("pass exactly one of --csv and --synthetic"))),
    };
    let cfg = RollingConfig {
        window_months: a.window,
        portfolios_per_month: a.portfolios,
        stocks_per_portfolio: a.stocks,
        lambda: a.lambda,
        seed: Seed(a.seed),
    };
    cfg.validate()?;
    prepare(&a.output.out)?;
    let res = rolling_regret_experiment(&panel, &cfg)?;
    let summary = json!({ "rolling": res.summary, "filters": filter_report });
    match a.output.format {
        Format::Csv => {
            res.write_csv(a.output.out.join("portfolio_months.csv"))?;
            write_json(&a.output.out.join("portfolio_summary.json"), &summary)?;
        }
        Format::Json => write_json(
            &a.output.out.join("portfolio.json"),
            &json!({ "summary": summary, "months": res.months }),
        )?,
    }
    println!("{}", serde_json::to_string(&res.summary).map_err(anyhow::Error::from)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Spo { command: SpoCommand::Train(a) } => spo_train(a),
        Command::Spo { command: SpoCommand::Bench(a) } => spo_bench(a),
        Command::Portfolio { command: PortfolioCommand::Run(a) } => portfolio(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("REGRET_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                par::configure_threads(n);
            }
            _ => {
                eprintln!("error: REGRET_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
