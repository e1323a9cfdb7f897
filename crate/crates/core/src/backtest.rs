//! Rolling-window out-of-sample evaluation with proportional transaction costs.
//!
//! Weights chosen from the `window` periods before `s` are held over period `s`.
//! They drift with realized returns, and rebalancing to the next window's weights
//! costs `c` per unit of turnover.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::csv_io::fmt_f64;
use crate::error::{Error, Result};
use crate::factor_model::{factor_covariance, fit_ols, sample_mean};
use crate::linalg::pseudo_inverse;
use crate::panel::{FactorPanel, ReturnsPanel};
use crate::portfolio::{self, PortfolioResult};
use crate::precision::{self, NodewiseConfig};
use crate::rng::derive_seed;

pub const DEFAULT_WINDOW: usize = 120;
pub const DEFAULT_TRANSACTION_COST: f64 = 0.005;
/// Largest tolerated share of windows whose estimation fails.
pub const MAX_FAILED_SHARE: f64 = 0.10;

/// Portfolio rule applied to each window's estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Gmv,
    Markowitz { rho1: f64 },
    ConstrainedMsr { delta: f64 },
    MaxOos { sigma: f64 },
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Gmv => "gmv",
            Strategy::Markowitz { .. } => "markowitz",
            Strategy::ConstrainedMsr { .. } => "msr",
            Strategy::MaxOos { .. } => "mos",
        }
    }

    fn weights(&self, gamma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<PortfolioResult> {
        match *self {
            Strategy::Gmv => portfolio::gmv_weights(gamma),
            Strategy::Markowitz { rho1 } => portfolio::markowitz_weights(gamma, mu, rho1),
            Strategy::ConstrainedMsr { delta } => portfolio::constrained_msr_weights(gamma, mu, delta),
            Strategy::MaxOos { sigma } => portfolio::mos_weights(gamma, mu, sigma),
        }
    }
}

/// Where a window's precision matrix comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Nodewise,
    /// Pseudo-inverse of the window's sample covariance.
    SampleCovPinv,
    /// `1/p` in every asset; ignores the strategy.
    EqualWeight,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Nodewise => "nodewise",
            Estimator::SampleCovPinv => "sample-pinv",
            Estimator::EqualWeight => "equal-weight",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub window: usize,
    pub strategy: Strategy,
    pub transaction_cost: f64,
    pub nodewise: NodewiseConfig,
    pub baselines: Vec<Estimator>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            strategy: Strategy::Gmv,
            transaction_cost: DEFAULT_TRANSACTION_COST,
            nodewise: NodewiseConfig::default(),
            baselines: vec![Estimator::EqualWeight, Estimator::SampleCovPinv],
        }
    }
}

#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub estimator: Estimator,
    /// Labels of the out-of-sample periods.
    pub periods: Vec<String>,
    pub gross_returns: DVector<f64>,
    pub net_returns: DVector<f64>,
    /// p x (T + 1): column `t` is held over out-of-sample period `t`; the last
    /// column is the rebalancing target after the final period.
    pub weights_history: DMatrix<f64>,
    pub turnover: DVector<f64>,
    pub leverage: DVector<f64>,
    pub max_leverage: DVector<f64>,
    pub gross: SeriesStats,
    pub net: SeriesStats,
    /// Windows (0-based, in fit order) whose estimation failed.
    pub failed_windows: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats {
    pub sr: f64,
    pub avg: f64,
    pub sd: f64,
}

/// A Jobson-Korkie comparison with Memmel's variance correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpeTest {
    pub statistic: f64,
    /// `P(Z > statistic)`.
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub strategy: Strategy,
    pub results: Vec<BacktestResult>,
    /// Net-return test of the first result against each later one; `None` when
    /// the test is undefined (constant or perfectly correlated series).
    pub tests: Vec<(Estimator, Option<SharpeTest>)>,
}

/// Mean, `n − 1` standard deviation and their ratio.
pub fn sharpe_of_series(x: &DVector<f64>) -> Result<SeriesStats> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("Sharpe ratio needs at least 2 returns, got {n}")));
    }
    let avg = x.mean();
    let var = x.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::NonPositive {
            context: "return variance".into(),
            value: var,
        });
    }
    let sd = var.sqrt();
    Ok(SeriesStats { sr: avg / sd, avg, sd })
}

/// Like [`sharpe_of_series`], but a constant series gets `sr = NaN` instead of an error.
fn series_stats(x: &DVector<f64>) -> SeriesStats {
    sharpe_of_series(x).unwrap_or_else(|_| SeriesStats {
        sr: f64::NAN,
        avg: x.mean(),
        sd: 0.0,
    })
}

/// One-sided test of `SR_a > SR_b` on paired return series.
pub fn jk_memmel_test(a: &DVector<f64>, b: &DVector<f64>) -> Result<SharpeTest> {
    let t = a.len();
    if b.len() != t {
        return Err(Error::Dimension {
            context: "paired return series".into(),
            expected: t,
            actual: b.len(),
        });
    }
    if t < 10 {
        return Err(Error::InsufficientData(format!("the Sharpe test needs T >= 10, got {t}")));
    }
    if a == b {
        return Ok(SharpeTest {
            statistic: 0.0,
            p_value: 0.5,
        });
    }
    let sa = sharpe_of_series(a)?;
    let sb = sharpe_of_series(b)?;
    let cov = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - sa.avg) * (y - sb.avg))
        .sum::<f64>()
        / (t - 1) as f64;
    let rho = cov / (sa.sd * sb.sd);
    if rho.abs() >= 1.0 - 1e-12 {
        return Err(Error::NonPositive {
            context: "Sharpe test variance (perfectly correlated series)".into(),
            value: 1.0 - rho.abs(),
        });
    }
    let theta = 2.0 * (1.0 - rho) + 0.5 * (sa.sr.powi(2) + sb.sr.powi(2)) - sa.sr * sb.sr * rho * rho;
    if !(theta > 0.0) {
        return Err(Error::NonPositive {
            context: "Sharpe test variance".into(),
            value: theta,
        });
    }
    let statistic = (sa.sr - sb.sr) * (t as f64).sqrt() / theta.sqrt();
    let normal = Normal::standard();
    Ok(SharpeTest {
        statistic,
        p_value: 1.0 - normal.cdf(statistic),
    })
}

/// `w_j(1 + y_j)/(1 + w'y)`.
pub fn drift_weights(weights: &DVector<f64>, returns: &DVector<f64>) -> Result<DVector<f64>> {
    let growth = 1.0 + weights.dot(returns);
    if growth.abs() < 1e-12 {
        return Err(Error::NonPositive {
            context: "portfolio gross growth 1 + y_P".into(),
            value: growth,
        });
    }
    Ok(weights.component_mul(&returns.add_scalar(1.0)) / growth)
}

/// Turnover, leverage and maximum leverage per out-of-sample period.
///
/// `weights_history` is p x (T + 1) and `returns` p x T, aligned as in [`BacktestResult`].
pub fn turnover_leverage(
    weights_history: &DMatrix<f64>,
    returns: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let t = returns.ncols();
    if weights_history.ncols() != t + 1 || weights_history.nrows() != returns.nrows() {
        return Err(Error::Dimension {
            context: "weights history columns".into(),
            expected: t + 1,
            actual: weights_history.ncols(),
        });
    }
    let mut turnover = DVector::zeros(t);
    let mut leverage = DVector::zeros(t);
    let mut max_leverage = DVector::zeros(t);
    for s in 0..t {
        let held = weights_history.column(s).into_owned();
        let drifted = drift_weights(&held, &returns.column(s).into_owned())?;
        let next = weights_history.column(s + 1);
        turnover[s] = (next - drifted).abs().sum();
        leverage[s] = next.iter().map(|w| w.min(0.0)).sum::<f64>().abs();
        max_leverage[s] = next.iter().fold(0.0_f64, |m, w| m.max(w.min(0.0).abs()));
    }
    Ok((turnover, leverage, max_leverage))
}

/// `y − c(1 + y)·turnover`.
pub fn net_return(gross: f64, cost: f64, turnover: f64) -> f64 {
    gross - cost * (1.0 + gross) * turnover
}

fn window_weights(
    returns: &ReturnsPanel,
    factors: &FactorPanel,
    config: &BacktestConfig,
    estimator: Estimator,
    index: usize,
) -> Result<DVector<f64>> {
    let p = returns.n_assets();
    if estimator == Estimator::EqualWeight {
        return Ok(portfolio::equal_weights(p).weights);
    }
    let mu = sample_mean(returns);
    let gamma = match estimator {
        Estimator::Nodewise => {
            let fit = fit_ols(returns, factors)?;
            let nodewise = NodewiseConfig {
                seed: derive_seed(config.nodewise.seed, index as u64),
                ..config.nodewise.clone()
            };
            precision::estimate(&fit, &nodewise)?.1.gamma
        }
        Estimator::SampleCovPinv => pseudo_inverse(&factor_covariance(returns.values()))?,
        Estimator::EqualWeight => unreachable!("handled above"),
    };
    let w = config.strategy.weights(&gamma, &mu)?.weights;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPositive {
            context: "non-finite portfolio weights".into(),
            value: f64::NAN,
        });
    }
    Ok(w)
}

fn validate(returns: &ReturnsPanel, factors: &FactorPanel, config: &BacktestConfig) -> Result<()> {
    factors.check_alignment(returns)?;
    let n = returns.n_periods();
    let k = factors.n_factors();
    if config.window >= n {
        return Err(Error::InvalidParameter(format!(
            "window {} must be shorter than the {n} available periods",
            config.window
        )));
    }
    if config.window < k + 10 {
        return Err(Error::InvalidParameter(format!(
            "window {} must be at least K + 10 = {}",
            config.window,
            k + 10
        )));
    }
    if !(config.transaction_cost >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "transaction cost must be non-negative, got {}",
            config.transaction_cost
        )));
    }
    Ok(())
}

/// Runs one estimator through every window.
pub fn rolling_backtest_with(
    returns: &ReturnsPanel,
    factors: &FactorPanel,
    config: &BacktestConfig,
    estimator: Estimator,
) -> Result<BacktestResult> {
    validate(returns, factors, config)?;
    let n = returns.n_periods();
    let p = returns.n_assets();
    let w = config.window;
    let t_oos = n - w;
    // fit i uses periods i..i+w and is held over period i+w
    let fits: Vec<Result<DVector<f64>>> = (0..=t_oos)
        .into_par_iter()
        .map(|i| {
            let r = returns.slice_periods(i, i + w)?;
            let f = factors.slice_periods(i, i + w)?;
            window_weights(&r, &f, config, estimator, i)
        })
        .collect();

    let mut failed_windows = Vec::new();
    let mut weights_history = DMatrix::zeros(p, t_oos + 1);
    let mut previous: Option<DVector<f64>> = None;
    for (i, fit) in fits.into_iter().enumerate() {
        let weights = match fit {
            Ok(v) => v,
            Err(e) => {
                log::warn!("{} window {i} failed: {e}", estimator.label());
                failed_windows.push(i);
                previous.clone().unwrap_or_else(|| portfolio::equal_weights(p).weights)
            }
        };
        weights_history.set_column(i, &weights);
        previous = Some(weights);
    }
    if failed_windows.len() as f64 > MAX_FAILED_SHARE * (t_oos + 1) as f64 {
        return Err(Error::TooManyFailures {
            what: format!("{} estimation windows", estimator.label()),
            failed: failed_windows.len(),
            total: t_oos + 1,
        });
    }

    let oos = returns.values().columns(w, t_oos).into_owned();
    let (turnover, leverage, max_leverage) = turnover_leverage(&weights_history, &oos)?;
    let gross_returns = DVector::from_fn(t_oos, |s, _| weights_history.column(s).dot(&oos.column(s)));
    let net_returns = DVector::from_fn(t_oos, |s, _| {
        net_return(gross_returns[s], config.transaction_cost, turnover[s])
    });
    Ok(BacktestResult {
        estimator,
        periods: returns.time_index()[w..].to_vec(),
        gross: series_stats(&gross_returns),
        net: series_stats(&net_returns),
        gross_returns,
        net_returns,
        weights_history,
        turnover,
        leverage,
        max_leverage,
        failed_windows,
    })
}

/// Nodewise estimator plus the configured baselines, with paired Sharpe tests.
pub fn rolling_backtest(returns: &ReturnsPanel, factors: &FactorPanel, config: &BacktestConfig) -> Result<BacktestReport> {
    let mut results = vec![rolling_backtest_with(returns, factors, config, Estimator::Nodewise)?];
    for &b in &config.baselines {
        if b != Estimator::Nodewise {
            results.push(rolling_backtest_with(returns, factors, config, b)?);
        }
    }
    let mut tests = Vec::new();
    for other in &results[1..] {
        let test = match jk_memmel_test(&results[0].net_returns, &other.net_returns) {
            Ok(t) => Some(t),
            Err(e) => {
                log::warn!("no Sharpe test against {}: {e}", other.estimator.label());
                None
            }
        };
        tests.push((other.estimator, test));
    }
    Ok(BacktestReport {
        strategy: config.strategy,
        results,
        tests,
    })
}

/// One row per out-of-sample period and estimator.
pub fn write_periods_csv(report: &BacktestReport, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "estimator,period,gross_return,net_return,turnover,leverage,max_leverage")?;
    for r in &report.results {
        for s in 0..r.gross_returns.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.estimator.label(),
                r.periods[s],
                fmt_f64(r.gross_returns[s]),
                fmt_f64(r.net_returns[s]),
                fmt_f64(r.turnover[s]),
                fmt_f64(r.leverage[s]),
                fmt_f64(r.max_leverage[s])
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per estimator: Sharpe ratio, mean and sd of gross and net returns,
/// average turnover and leverage, and the p-value against the nodewise run.
pub fn write_summary_csv(report: &BacktestReport, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "estimator,strategy,sr_gross,avg_gross,sd_gross,sr_net,avg_net,sd_net,turnover,leverage,max_leverage,jk_statistic,p_value,failed_windows"
    )?;
    for r in &report.results {
        let test = report.tests.iter().find(|(e, _)| *e == r.estimator).and_then(|(_, t)| *t);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.estimator.label(),
            report.strategy.label(),
            fmt_f64(r.gross.sr),
            fmt_f64(r.gross.avg),
            fmt_f64(r.gross.sd),
            fmt_f64(r.net.sr),
            fmt_f64(r.net.avg),
            fmt_f64(r.net.sd),
            fmt_f64(r.turnover.mean()),
            fmt_f64(r.leverage.mean()),
            fmt_f64(r.max_leverage.mean()),
            test.map(|t| fmt_f64(t.statistic)).unwrap_or_default(),
            test.map(|t| fmt_f64(t.p_value)).unwrap_or_default(),
            r.failed_windows.len()
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Three-decimal table of the summary columns.
pub fn summary_table(report: &BacktestReport) -> String {
    let mut s = format!(
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9} {:>8}\n",
        "estimator", "SR", "AVG", "SD", "SR net", "turnover", "leverage", "max lev", "p-value"
    );
    for r in &report.results {
        let p = report
            .tests
            .iter()
            .find(|(e, _)| *e == r.estimator)
            .and_then(|(_, t)| t.map(|t| format!("{:.3}", t.p_value)))
            .unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<14} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>9.3} {:>9.3} {:>9.3} {:>8}\n",
            r.estimator.label(),
            r.gross.sr,
            r.gross.avg,
            r.gross.sd,
            r.net.sr,
            r.turnover.mean(),
            r.leverage.mean(),
            r.max_leverage.mean(),
            p
        ));
    }
    s
}
