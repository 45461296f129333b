use std::io::Write;

use regret_core::portfolio::{
    ledoit_wolf, load_and_filter, rolling_regret_experiment, synthetic_returns, FilterConfig,
    RollingConfig,
};
use regret_core::prob::Seed;
use regret_core::Error;

fn month(t: usize) -> String {
    format!("{:04}-{:02}", 2000 + t / 12, t % 12 + 1)
}

/// Two tickers: A has 70 clean months, B only 59.
fn write_panel(extra: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "date,ticker,ret,price,mktcap").unwrap();
    for t in 0..70 {
        writeln!(f, "{},A,0.01,10,1e8", month(t)).unwrap();
    }
    for t in 0..59 {
        writeln!(f, "{},B,0.02,10,1e8", month(t)).unwrap();
    }
    write!(f, "{extra}").unwrap();
    f.flush().unwrap();
    f
}

#[test]
fn short_history_ticker_is_dropped() {
    let f = write_panel("");
    let (panel, rep) = load_and_filter(f.path(), &FilterConfig::default()).unwrap();
    assert_eq!(panel.tickers, vec!["A".to_string()]);
    assert_eq!(panel.n_months(), 70);
    assert_eq!(rep.short_history_tickers, 1);
    assert_eq!(rep.short_history_rows, 59);
    assert_eq!(rep.rows_kept, 70);
}

#[test]
fn impossible_returns_and_small_caps_are_dropped() {
    let f = write_panel("2010-01,C,-1.5,10,1e8\n2010-01,D,11,10,1e8\n2010-01,E,0.1,10,1e6\n2010-01,F,0.1,0,1e8\n");
    let (_, rep) = load_and_filter(f.path(), &FilterConfig::default()).unwrap();
    assert_eq!(rep.below_return_floor, 1);
    assert_eq!(rep.above_return_cap, 1);
    assert_eq!(rep.below_min_mktcap, 1);
    assert_eq!(rep.nonpositive_price, 1);
    assert_eq!(rep.rows_read, 133);
}

#[test]
fn missing_column_is_a_schema_error() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "date,ticker\n2000-01,A").unwrap();
    assert!(matches!(
        load_and_filter(f.path(), &FilterConfig::default()),
        Err(Error::Schema(_))
    ));
}

#[test]
fn nothing_left_is_an_empty_universe() {
    let cfg = FilterConfig { history_min: 100, ..FilterConfig::default() };
    let f = write_panel("");
    assert!(matches!(load_and_filter(f.path(), &cfg), Err(Error::EmptyUniverse)));
}

#[test]
fn clean_synthetic_panel_round_trips_without_drops() {
    let panel = synthetic_returns(20, 72, 3, Seed(1)).unwrap();
    let f = tempfile::NamedTempFile::new().unwrap();
    panel.write_csv(f.path()).unwrap();
    let (back, rep) = load_and_filter(f.path(), &FilterConfig::default()).unwrap();
    assert_eq!(rep.rows_dropped(), 0);
    assert_eq!(back.n_tickers(), 20);
    assert!((back.returns.clone() - panel.returns).abs().max() < 1e-12);
}

#[test]
fn shrinkage_intensity_is_a_weight() {
    let panel = synthetic_returns(30, 36, 2, Seed(2)).unwrap();
    let (est, delta) = ledoit_wolf(&panel.returns);
    assert!((0.0..=1.0).contains(&delta));
    assert!(est.clone().cholesky().is_some());
    assert!((est.clone() - est.transpose()).abs().max() < 1e-15);
}

#[test]
fn rolling_experiment_shape_and_sign() {
    let panel = synthetic_returns(60, 48, 3, Seed(3)).unwrap();
    let mut cfg = RollingConfig::new(Seed(4));
    cfg.portfolios_per_month = 10;
    cfg.stocks_per_portfolio = 8;
    let res = rolling_regret_experiment(&panel, &cfg).unwrap();
    assert_eq!(res.months.len(), 48 - 36);
    assert_eq!(res.summary.forecast_solves, 0);
    for m in &res.months {
        assert!(m.forecast_regret_mean < 0.0);
        assert!(m.realized_objective_gap_mean <= 1e-8);
        assert_eq!(m.forecast_solves, 0);
    }
    let again = rolling_regret_experiment(&panel, &cfg).unwrap();
    assert_eq!(res.months, again.months);
}
