//! Monte-Carlo harness: draw a factor model, simulate panels, run the estimation
//! pipeline and measure `|ŜR² − SR²|` for four Sharpe-ratio targets.
//!
//! Seeds split hierarchically: the configuration seed yields one seed per
//! replication, and each replication derives separate streams for calibration
//! draws, panel draws and cross-validation folds. Reports therefore depend only
//! on the configuration, never on the number of threads.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::csv_io::fmt_f64;
use crate::error::{Error, Result};
use crate::factor_model::{fit_ols, sample_mean};
use crate::linalg::{min_eigenvalue, spd_inverse};
use crate::panel::{FactorPanel, ReturnsPanel};
use crate::portfolio::{self, Branch};
use crate::precision::{self, NodewiseConfig, NodewisePrecision, Selector};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Smallest eigenvalue tolerated in the masked error covariance.
pub const SPD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PRule {
    HalfN,
    ThreeHalvesN,
    Explicit(usize),
}

impl PRule {
    pub fn assets(self, n: usize) -> usize {
        match self {
            PRule::HalfN => n / 2,
            PRule::ThreeHalvesN => 3 * n / 2,
            PRule::Explicit(p) => p,
        }
    }

    pub fn label(self) -> String {
        match self {
            PRule::HalfN => "n/2".into(),
            PRule::ThreeHalvesN => "3n/2".into(),
            PRule::Explicit(p) => format!("{p}"),
        }
    }
}

/// Mask multiplied elementwise into the base error covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorStructure {
    /// `ρ^{|i−j|}`.
    Toeplitz(f64),
    /// Blocks of ones with the given sizes, cycled until `p` is covered.
    Blocks(Vec<usize>),
}

impl ErrorStructure {
    pub fn label(&self) -> String {
        match self {
            ErrorStructure::Toeplitz(rho) => format!("toeplitz({rho})"),
            ErrorStructure::Blocks(b) => {
                let sizes: Vec<String> = b.iter().map(|s| s.to_string()).collect();
                format!("blocks({})", sizes.join(";"))
            }
        }
    }

    pub fn mask(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            ErrorStructure::Toeplitz(rho) => precision::toeplitz_cov(*rho, p),
            ErrorStructure::Blocks(sizes) => {
                if sizes.is_empty() || sizes.contains(&0) {
                    return Err(Error::InvalidParameter("block sizes must be positive".into()));
                }
                let mut label = vec![0usize; p];
                let (mut at, mut b) = (0, 0);
                while at < p {
                    let size = sizes[b % sizes.len()];
                    for l in label.iter_mut().skip(at).take(size) {
                        *l = b;
                    }
                    at += size;
                    b += 1;
                }
                Ok(DMatrix::from_fn(p, p, |i, j| if label[i] == label[j] { 1.0 } else { 0.0 }))
            }
        }
    }
}

/// Source of the unmasked error covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseErrorCov {
    /// `D[(1−c)I + c11']D` with `D² = diag(v)`, `v_j ~ U(low, high)·scale`.
    SyntheticDiagonal {
        low: f64,
        high: f64,
        scale: f64,
        correlation: f64,
    },
    /// A user-supplied covariance; its leading `p x p` block is used.
    UserMatrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSpec {
    pub factor_mean: DVector<f64>,
    pub factor_cov: DMatrix<f64>,
    pub alpha_sd: f64,
    pub beta_low: f64,
    pub beta_high: f64,
    pub base: BaseErrorCov,
}

impl CalibrationSpec {
    /// Monthly-scale defaults: a market factor with mean 0.006 and sd 0.045, and
    /// further uncorrelated factors with mean 0.002 and sd 0.03.
    pub fn synthetic(k: usize) -> Self {
        let factor_mean = DVector::from_fn(k, |i, _| if i == 0 { 0.006 } else { 0.002 });
        let sd = DVector::from_fn(k, |i, _| if i == 0 { 0.045 } else { 0.03 });
        Self {
            factor_mean,
            factor_cov: DMatrix::from_diagonal(&sd.component_mul(&sd)),
            alpha_sd: 0.002,
            beta_low: 0.25,
            beta_high: 1.75,
            base: BaseErrorCov::SyntheticDiagonal {
                low: 0.5,
                high: 2.0,
                scale: 1e-3,
                correlation: 0.5,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let k = self.factor_mean.len();
        if k == 0 || self.factor_cov.shape() != (k, k) {
            return Err(Error::Dimension {
                context: "factor mean and covariance".into(),
                expected: k,
                actual: self.factor_cov.nrows(),
            });
        }
        if !(min_eigenvalue(&self.factor_cov) > 0.0) {
            return Err(Error::InvalidParameter("factor covariance must be positive definite".into()));
        }
        if !(self.alpha_sd >= 0.0) || !(self.beta_low <= self.beta_high) {
            return Err(Error::InvalidParameter("improper alpha or beta distribution".into()));
        }
        if let BaseErrorCov::SyntheticDiagonal {
            low,
            high,
            scale,
            correlation,
        } = self.base
        {
            if !(low > 0.0 && low <= high && scale > 0.0) {
                return Err(Error::InvalidParameter("error variance range must be positive".into()));
            }
            if !(0.0..=1.0).contains(&correlation) {
                return Err(Error::InvalidParameter(format!(
                    "base correlation must lie in [0, 1], got {correlation}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub p_rule: PRule,
    pub structure: ErrorStructure,
    pub replications: usize,
    pub seed: u64,
    pub nodewise: NodewiseConfig,
    pub rho1: f64,
    pub sigma: f64,
    pub calibration: CalibrationSpec,
}

impl SimConfig {
    /// Three factors, Toeplitz(0.5) errors, `p = n/2`, GIC.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            p_rule: PRule::HalfN,
            structure: ErrorStructure::Toeplitz(0.5),
            replications: 20,
            seed: 0,
            nodewise: NodewiseConfig::with_selector(Selector::Gic),
            rho1: portfolio::DEFAULT_RHO1,
            sigma: portfolio::DEFAULT_SIGMA,
            calibration: CalibrationSpec::synthetic(3),
        }
    }

    pub fn n_factors(&self) -> usize {
        self.calibration.factor_mean.len()
    }

    pub fn n_assets(&self) -> usize {
        self.p_rule.assets(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(Error::InvalidParameter(format!("n must be at least 20, got {}", self.n)));
        }
        if self.replications < 1 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        if self.n_assets() < 2 {
            return Err(Error::InvalidParameter(format!("need p >= 2 assets, got {}", self.n_assets())));
        }
        if let ErrorStructure::Toeplitz(rho) = self.structure {
            if !(rho.abs() < 1.0) {
                return Err(Error::InvalidParameter(format!("need |rho| < 1, got {rho}")));
            }
        }
        if self.n_factors() >= self.n {
            return Err(Error::InvalidParameter("need fewer factors than periods".into()));
        }
        self.calibration.validate()
    }
}

/// Population quantities of one simulated market.
#[derive(Debug, Clone)]
pub struct Truth {
    pub alpha: DVector<f64>,
    pub loadings: DMatrix<f64>,
    pub factor_mean: DVector<f64>,
    pub factor_cov: DMatrix<f64>,
    pub sigma_n: DMatrix<f64>,
    pub sigma_y: DMatrix<f64>,
    pub mu: DVector<f64>,
    /// Ridge added to `Σ_n` by the positive-definiteness guard, if any.
    pub ridge: Option<f64>,
}

/// `base ∘ mask`, with a ridge if the product is not safely positive definite.
pub fn masked_error_cov(base: &DMatrix<f64>, mask: &DMatrix<f64>) -> Result<(DMatrix<f64>, Option<f64>)> {
    if base.shape() != mask.shape() || !base.is_square() {
        return Err(Error::Dimension {
            context: "base error covariance and mask".into(),
            expected: mask.nrows(),
            actual: base.nrows(),
        });
    }
    let mut sigma = base.component_mul(mask);
    let lmin = min_eigenvalue(&sigma);
    if lmin < SPD_FLOOR {
        let ridge = lmin.abs() + 1e-8;
        log::warn!("error covariance has minimum eigenvalue {lmin:.3e}; adding ridge {ridge:.3e}");
        for i in 0..sigma.nrows() {
            sigma[(i, i)] += ridge;
        }
        return Ok((sigma, Some(ridge)));
    }
    Ok((sigma, None))
}

/// Draws loadings, alphas and the error covariance for one replication.
pub fn build_true_covariance(config: &SimConfig, rng: &mut Rng) -> Result<Truth> {
    let cal = &config.calibration;
    let p = config.n_assets();
    let k = config.n_factors();
    let beta = Uniform::new_inclusive(cal.beta_low, cal.beta_high)
        .map_err(|e| Error::InvalidParameter(format!("beta distribution: {e}")))?;
    let loadings = DMatrix::from_fn(p, k, |_, _| beta.sample(rng));
    let alpha_dist =
        Normal::new(0.0, cal.alpha_sd).map_err(|e| Error::InvalidParameter(format!("alpha distribution: {e}")))?;
    let alpha = DVector::from_fn(p, |_, _| alpha_dist.sample(rng));
    let base = match &cal.base {
        BaseErrorCov::SyntheticDiagonal {
            low,
            high,
            scale,
            correlation,
        } => {
            let var = Uniform::new_inclusive(*low, *high)
                .map_err(|e| Error::InvalidParameter(format!("error variance distribution: {e}")))?;
            let sd: Vec<f64> = (0..p).map(|_| (var.sample(rng) * scale).sqrt()).collect();
            DMatrix::from_fn(p, p, |i, j| {
                let r = if i == j { 1.0 } else { *correlation };
                r * sd[i] * sd[j]
            })
        }
        BaseErrorCov::UserMatrix(m) => {
            if m.nrows() < p || !m.is_square() {
                return Err(Error::Dimension {
                    context: "user base error covariance".into(),
                    expected: p,
                    actual: m.nrows(),
                });
            }
            m.view((0, 0), (p, p)).into_owned()
        }
    };
    let (sigma_n, ridge) = masked_error_cov(&base, &config.structure.mask(p)?)?;
    let sigma_y = &loadings * &cal.factor_cov * loadings.transpose() + &sigma_n;
    let mu = &alpha + &loadings * &cal.factor_mean;
    Ok(Truth {
        alpha,
        loadings,
        factor_mean: cal.factor_mean.clone(),
        factor_cov: cal.factor_cov.clone(),
        sigma_n,
        sigma_y,
        mu,
        ridge,
    })
}

fn lower_cholesky(m: &DMatrix<f64>) -> DMatrix<f64> {
    match m.clone().cholesky() {
        Some(c) => c.l(),
        // only reached for a zero covariance
        None => DMatrix::zeros(m.nrows(), m.ncols()),
    }
}

/// Simulated returns, factors and the true errors, p x n.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub returns: ReturnsPanel,
    pub factors: FactorPanel,
    pub errors: DMatrix<f64>,
}

/// Draws `n` periods of Gaussian factors and errors and assembles returns.
pub fn generate_panel(truth: &Truth, n: usize, seed: u64) -> Result<SimulatedPanel> {
    let p = truth.mu.len();
    let k = truth.factor_mean.len();
    let mut rng = rng_from_seed(seed);
    let lf = lower_cholesky(&truth.factor_cov);
    let le = lower_cholesky(&truth.sigma_n);
    let zf = DMatrix::from_fn(k, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let ze = DMatrix::from_fn(p, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut factors = lf * zf;
    for mut col in factors.column_iter_mut() {
        col += &truth.factor_mean;
    }
    let errors = le * ze;
    let mut returns = &truth.loadings * &factors + &errors;
    for mut col in returns.column_iter_mut() {
        col += &truth.alpha;
    }
    Ok(SimulatedPanel {
        returns: ReturnsPanel::from_matrix(returns)?,
        factors: FactorPanel::from_matrix(factors)?,
        errors,
    })
}

/// Population Sharpe-ratio targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub gmv_sr: f64,
    pub mmv_sr: f64,
    pub msr: f64,
    pub msr_c: f64,
    pub msr_star: f64,
    /// `√(μ'Σ_y⁻¹μ)`.
    pub sr_star: f64,
    pub branch: Branch,
}

pub fn true_sharpe_quantities(sigma_y: &DMatrix<f64>, mu: &DVector<f64>, rho1: f64) -> Result<Targets> {
    let gamma = spd_inverse(sigma_y, "true returns covariance")?;
    let m = portfolio::constrained_msr(&gamma, mu)?;
    Ok(Targets {
        gmv_sr: portfolio::gmv_sharpe(&gamma, mu)?,
        mmv_sr: portfolio::markowitz_sharpe(&gamma, mu, rho1)?,
        msr: m.msr,
        msr_c: m.msr_c,
        msr_star: m.msr_star,
        sr_star: portfolio::msr_squared(&gamma, mu)?.sqrt(),
        branch: m.branch,
    })
}

/// The four error categories, in report order.
pub const CATEGORIES: [&str; 4] = ["MSR", "OOS-MSR", "GMV-SR", "MKW-SR"];

/// Estimated and true squared Sharpe ratios per category, in [`CATEGORIES`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredSharpe {
    pub estimate: [f64; 4],
    pub target: [f64; 4],
}

impl SquaredSharpe {
    pub fn errors(&self) -> [f64; 4] {
        std::array::from_fn(|c| (self.estimate[c] - self.target[c]).abs())
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub outcome: std::result::Result<SquaredSharpe, String>,
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub n: usize,
    pub p: usize,
    pub p_rule: PRule,
    pub structure: ErrorStructure,
    pub selector: Selector,
    /// Mean `|ŜR² − SR²|` over successful replications, in [`CATEGORIES`] order.
    pub mean_errors: [f64; 4],
    pub records: Vec<ReplicationRecord>,
    pub failures: usize,
    pub runtime_secs: f64,
}

fn replication(config: &SimConfig, seed: u64) -> Result<(SquaredSharpe, Option<f64>)> {
    let truth = build_true_covariance(config, &mut rng_from_seed(derive_seed(seed, 0)))?;
    let targets = true_sharpe_quantities(&truth.sigma_y, &truth.mu, config.rho1)?;
    let panel = generate_panel(&truth, config.n, derive_seed(seed, 1))?;
    let fit = fit_ols(&panel.returns, &panel.factors)?;
    let nodewise_config = NodewiseConfig {
        seed: derive_seed(seed, 2),
        ..config.nodewise.clone()
    };
    let (_, rp) = precision::estimate(&fit, &nodewise_config)?;
    let mu_hat = sample_mean(&panel.returns);
    let g = &rp.gamma;
    let msr = portfolio::constrained_msr(g, &mu_hat)?;
    let sr_mos = portfolio::mos_sharpe(g, &mu_hat, &truth.sigma_y, &truth.mu)?;
    let gmv = portfolio::gmv_sharpe(g, &mu_hat)?;
    let mkw = portfolio::markowitz_sharpe(g, &mu_hat, config.rho1)?;
    let sq = SquaredSharpe {
        estimate: [msr.msr_star.powi(2), sr_mos.powi(2), gmv.powi(2), mkw.powi(2)],
        target: [
            targets.msr_star.powi(2),
            targets.sr_star.powi(2),
            targets.gmv_sr.powi(2),
            targets.mmv_sr.powi(2),
        ],
    };
    Ok((sq, truth.ridge))
}

/// Runs all replications of one design.
pub fn run_simulation(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let start = Instant::now();
    let records: Vec<ReplicationRecord> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(config.seed, r as u64);
            let (outcome, ridge) = match replication(config, seed) {
                Ok((sq, ridge)) => (Ok(sq), ridge),
                Err(e) => {
                    log::warn!("replication {r} failed: {e}");
                    (Err(e.to_string()), None)
                }
            };
            ReplicationRecord {
                replication: r,
                seed,
                outcome,
                ridge,
            }
        })
        .collect();
    let ok: Vec<[f64; 4]> = records
        .iter()
        .filter_map(|r| r.outcome.as_ref().ok().map(|s| s.errors()))
        .collect();
    let failures = records.len() - ok.len();
    let mean_errors = std::array::from_fn(|c| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|e| e[c]).sum::<f64>() / ok.len() as f64
        }
    });
    Ok(SimReport {
        n: config.n,
        p: config.n_assets(),
        p_rule: config.p_rule,
        structure: config.structure.clone(),
        selector: config.nodewise.selector,
        mean_errors,
        records,
        failures,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Nodewise regression on the true errors instead of factor-model residuals.
pub fn oracle_nodewise_diagnostic(true_errors: &DMatrix<f64>, config: &NodewiseConfig) -> Result<NodewisePrecision> {
    precision::fit_nodewise_residuals(true_errors, config)
}

fn selector_label(s: Selector) -> String {
    match s {
        Selector::Gic => "gic".into(),
        Selector::Cv => "cv".into(),
        Selector::Fixed(l) => format!("fixed({l})"),
    }
}

/// One row per category and design.
pub fn write_report_csv(reports: &[SimReport], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "category,n,p,p_rule,structure,selector,mean_abs_error,successes,failures")?;
    for r in reports {
        for (c, name) in CATEGORIES.iter().enumerate() {
            writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{}",
                r.n,
                r.p,
                r.p_rule.label(),
                r.structure.label(),
                selector_label(r.selector),
                fmt_f64(r.mean_errors[c]),
                r.records.len() - r.failures,
                r.failures
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per replication with estimates, targets and errors.
pub fn write_records_csv(reports: &[SimReport], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "n,p,structure,replication,seed,status")?;
    for name in CATEGORIES {
        write!(out, ",{name}_estimate,{name}_target,{name}_error")?;
    }
    writeln!(out, ",ridge")?;
    for r in reports {
        for rec in &r.records {
            write!(out, "{},{},{},{},{}", r.n, r.p, r.structure.label(), rec.replication, rec.seed)?;
            match &rec.outcome {
                Ok(sq) => {
                    write!(out, ",ok")?;
                    let errs = sq.errors();
                    for c in 0..4 {
                        write!(out, ",{},{},{}", fmt_f64(sq.estimate[c]), fmt_f64(sq.target[c]), fmt_f64(errs[c]))?;
                    }
                }
                Err(msg) => {
                    write!(out, ",\"failed: {}\"", msg.replace('"', "'"))?;
                    for _ in 0..4 {
                        write!(out, ",,,")?;
                    }
                }
            }
            writeln!(out, ",{}", rec.ridge.map(fmt_f64).unwrap_or_default())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Mean errors by category (rows) and sample size (columns), three decimals.
pub fn summary_table(reports: &[SimReport]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<10}", "category");
    for r in reports {
        let _ = write!(s, " {:>22}", format!("n={} p={} {}", r.n, r.p, r.structure.label()));
    }
    s.push('\n');
    for (c, name) in CATEGORIES.iter().enumerate() {
        let _ = write!(s, "{name:<10}");
        for r in reports {
            let _ = write!(s, " {:>22.3}", r.mean_errors[c]);
        }
        s.push('\n');
    }
    let failed: usize = reports.iter().map(|r| r.failures).sum();
    if failed > 0 {
        let _ = writeln!(s, "failed replications: {failed}");
    }
    s
}
