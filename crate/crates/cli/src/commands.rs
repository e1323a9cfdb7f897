use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use nalgebra::{DMatrix, DVector};
use nodewise::backtest::{self, BacktestConfig, Strategy};
use nodewise::csv_io::{fmt_f64, write_matrix_csv};
use nodewise::factor_model::{factor_covariance, sample_mean};
use nodewise::linalg::condition_number_sym;
use nodewise::panel::{load_factors_csv, load_returns_csv};
use nodewise::portfolio::{self, PortfolioResult};
use nodewise::simulation::{self, CalibrationSpec, SimConfig};
use nodewise::{fit_ols, precision, FactorPanel, ReturnsPanel, Selector};

use crate::config::Settings;

fn selector_label(s: Selector) -> String {
    match s {
        Selector::Gic => "gic".into(),
        Selector::Cv => "cv".into(),
        Selector::Fixed(l) => format!("fixed({l})"),
    }
}

fn output_dir(settings: &Settings) -> Result<&Path> {
    let out = settings.out.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    Ok(out)
}

fn load_panels(settings: &Settings) -> Result<(ReturnsPanel, FactorPanel)> {
    let rpath = settings
        .returns
        .as_ref()
        .ok_or_else(|| anyhow!("no returns file given; use --returns or the `returns` key"))?;
    let fpath = settings
        .factors
        .as_ref()
        .ok_or_else(|| anyhow!("no factors file given; use --factors or the `factors` key"))?;
    let returns = load_returns_csv(rpath).with_context(|| format!("loading returns from {}", rpath.display()))?;
    let factors =
        load_factors_csv(fpath, Some(&returns)).with_context(|| format!("loading factors from {}", fpath.display()))?;
    Ok((returns, factors))
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn simulate(settings: &Settings) -> Result<()> {
    let out = output_dir(settings)?;
    let mut configs = Vec::new();
    for &n in &settings.n {
        let config = SimConfig {
            n,
            p_rule: settings.p,
            structure: settings.structure(),
            replications: settings.replications,
            seed: settings.seed,
            nodewise: settings.nodewise()?,
            rho1: settings.rho1,
            sigma: settings.sigma,
            calibration: CalibrationSpec::synthetic(settings.n_factors),
        };
        config.validate()?;
        configs.push(config);
    }
    let mut reports = Vec::new();
    for config in &configs {
        let report = simulation::run_simulation(config)?;
        eprintln!(
            "n={} p={}: {} replications in {:.1} s",
            report.n,
            report.p,
            report.records.len(),
            report.runtime_secs
        );
        reports.push(report);
    }
    simulation::write_report_csv(&reports, &out.join("sim_report.csv"))?;
    simulation::write_records_csv(&reports, &out.join("sim_records.csv"))?;
    let table = simulation::summary_table(&reports);
    write_text(out.join("sim_summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn backtest(settings: &Settings) -> Result<()> {
    let out = output_dir(settings)?;
    let (returns, factors) = load_panels(settings)?;
    let config = BacktestConfig {
        window: settings.window,
        strategy: settings.strategy(),
        transaction_cost: settings.tc,
        nodewise: settings.nodewise()?,
        baselines: settings.baselines.clone(),
    };
    let start = Instant::now();
    let report = backtest::rolling_backtest(&returns, &factors, &config)?;
    eprintln!(
        "{} windows per estimator in {:.1} s",
        returns.n_periods() - config.window + 1,
        start.elapsed().as_secs_f64()
    );
    backtest::write_periods_csv(&report, &out.join("backtest_periods.csv"))?;
    backtest::write_summary_csv(&report, &out.join("backtest_summary.csv"))?;
    print!("{}", backtest::summary_table(&report));
    Ok(())
}

pub fn precision(settings: &Settings) -> Result<()> {
    let out = output_dir(settings)?;
    let (returns, factors) = load_panels(settings)?;
    let fit = fit_ols(&returns, &factors)?;
    let (nw, rp) = precision::estimate(&fit, &settings.nodewise()?)?;
    let ids = returns.asset_ids();
    write_matrix_csv(&out.join("omega.csv"), ids, &nw.omega)?;
    write_matrix_csv(&out.join("omega_sym.csv"), ids, &nw.omega_sym)?;
    write_matrix_csv(&out.join("gamma.csv"), ids, &rp.gamma)?;

    let mut d = String::new();
    writeln!(d, "n_periods = {}", returns.n_periods())?;
    writeln!(d, "n_assets = {}", returns.n_assets())?;
    writeln!(d, "n_factors = {}", factors.n_factors())?;
    writeln!(d, "selector = {}", selector_label(nw.selector))?;
    writeln!(d, "condition_factor_cov = {}", fmt_f64(condition_number_sym(&fit.factor_cov)))?;
    writeln!(d, "condition_omega_sym = {}", fmt_f64(condition_number_sym(&nw.omega_sym)))?;
    writeln!(d, "condition_gamma = {}", fmt_f64(condition_number_sym(&rp.gamma)))?;
    for (j, id) in ids.iter().enumerate() {
        writeln!(d, "lambda.{id} = {}", fmt_f64(nw.lambdas[j]))?;
        writeln!(d, "tau_sq.{id} = {}", fmt_f64(nw.tau_sq[j]))?;
        writeln!(d, "nonzero.{id} = {}", nw.gammas[j].len())?;
    }
    write_text(out.join("precision_diagnostics.txt"), &d)?;
    println!(
        "estimated {} x {} precision matrices ({} selector)",
        ids.len(),
        ids.len(),
        selector_label(nw.selector)
    );
    Ok(())
}

fn weights_for(strategy: Strategy, gamma: &DMatrix<f64>, mu: &DVector<f64>) -> nodewise::Result<PortfolioResult> {
    match strategy {
        Strategy::Gmv => portfolio::gmv_weights(gamma),
        Strategy::Markowitz { rho1 } => portfolio::markowitz_weights(gamma, mu, rho1),
        Strategy::ConstrainedMsr { delta } => portfolio::constrained_msr_weights(gamma, mu, delta),
        Strategy::MaxOos { sigma } => portfolio::mos_weights(gamma, mu, sigma),
    }
}

fn estimate_line(key: &str, value: nodewise::Result<f64>) -> String {
    match value {
        Ok(v) => format!("{key} = {}\n", fmt_f64(v)),
        Err(e) => format!("{key} = NA # {e}\n"),
    }
}

pub fn weights(settings: &Settings) -> Result<()> {
    let out = output_dir(settings)?;
    let (returns, factors) = load_panels(settings)?;
    let fit = fit_ols(&returns, &factors)?;
    let (_, rp) = precision::estimate(&fit, &settings.nodewise()?)?;
    let gamma = &rp.gamma;
    let mu = sample_mean(&returns);
    let strategy = settings.strategy();
    let result = weights_for(strategy, gamma, &mu)?;

    let mut csv = String::from("asset,weight\n");
    for (id, w) in returns.asset_ids().iter().zip(result.weights.iter()) {
        writeln!(csv, "{id},{}", fmt_f64(*w))?;
    }
    write_text(out.join("weights.csv"), &csv)?;

    let sigma_y = factor_covariance(returns.values());
    let msr = portfolio::constrained_msr(gamma, &mu);
    let mut s = String::new();
    s.push_str(&estimate_line("gmv_sr", portfolio::gmv_sharpe(gamma, &mu)));
    s.push_str(&estimate_line("mmv_sr", portfolio::markowitz_sharpe(gamma, &mu, settings.rho1)));
    s.push_str(&estimate_line("msr", msr.as_ref().map(|m| m.msr).map_err(clone_err)));
    s.push_str(&estimate_line("msr_c", msr.as_ref().map(|m| m.msr_c).map_err(clone_err)));
    s.push_str(&estimate_line("msr_star", msr.as_ref().map(|m| m.msr_star).map_err(clone_err)));
    s.push_str(&estimate_line("sr_mos", portfolio::mos_sharpe(gamma, &mu, &sigma_y, &mu)));
    match &msr {
        Ok(m) => writeln!(s, "branch = {:+}", m.branch.sign())?,
        Err(e) => writeln!(s, "branch = NA # {e}")?,
    }
    write_text(out.join("sharpe.txt"), &s)?;

    println!("strategy: {}", strategy.label());
    println!("weight sum: {:.6}", result.weight_sum);
    println!("gross leverage: {:.6}", result.gross_leverage);
    match strategy {
        Strategy::Markowitz { rho1 } => {
            println!("w'mu = {:.6} (target rho1 = {:.6})", result.weights.dot(&mu), rho1);
        }
        Strategy::ConstrainedMsr { .. } => {
            let branch = msr.map_err(|e| anyhow!(e))?.branch;
            println!("branch: {:+}", branch.sign());
        }
        _ => {}
    }
    Ok(())
}

fn clone_err(e: &nodewise::Error) -> nodewise::Error {
    nodewise::Error::InvalidParameter(e.to_string())
}
