//! Nodewise-regression precision matrices.
//!
//! Each asset's factor-model residual is lasso-regressed on the residuals of all
//! other assets. Row `j` of `Ω̂` is `1/τ̂_j²` on the diagonal and `−γ̂_j/τ̂_j²` off it.
//! The returns precision `Γ̂` then follows from the Woodbury identity, with the
//! symmetrized `Ω̂` inside the bracket and the raw `Ω̂` outside.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::factor_model::FactorModelFit;
use crate::lasso::{self, argmin_first, gic_value, log_grid, FoldScheme, Moments, TargetProblem};
use crate::linalg::spd_inverse;

/// Relative floor on `τ̂_j²` against the residual variance of asset `j`.
pub const TAU_FLOOR: f64 = 1e-12;

/// Tuning-parameter choice for every nodewise regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    /// Generalized information criterion.
    Gic,
    /// k-fold cross-validated mean squared error.
    Cv,
    /// A fixed λ for every asset.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct NodewiseConfig {
    pub selector: Selector,
    pub cv_folds: usize,
    pub fold_scheme: FoldScheme,
    pub seed: u64,
    pub grid_size: usize,
    pub lambda_min_ratio: f64,
    pub standardize: bool,
    /// End each path early once the fit stops improving.
    pub early_stop: bool,
}

impl Default for NodewiseConfig {
    fn default() -> Self {
        Self {
            selector: Selector::Gic,
            cv_folds: 10,
            fold_scheme: FoldScheme::Random,
            seed: 0,
            grid_size: lasso::DEFAULT_GRID_SIZE,
            lambda_min_ratio: lasso::DEFAULT_LAMBDA_MIN_RATIO,
            standardize: true,
            early_stop: true,
        }
    }
}

impl NodewiseConfig {
    pub fn with_selector(selector: Selector) -> Self {
        Self {
            selector,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodewisePrecision {
    /// `Ω̂`, generally not symmetric.
    pub omega: DMatrix<f64>,
    /// `(Ω̂ + Ω̂')/2`, bitwise symmetric.
    pub omega_sym: DMatrix<f64>,
    /// Nonzero entries of `γ̂_j`, indexed by the other asset's position in `0..p`.
    pub gammas: Vec<Vec<(usize, f64)>>,
    pub tau_sq: DVector<f64>,
    /// Selected λ per asset.
    pub lambdas: DVector<f64>,
    pub selector: Selector,
}

impl NodewisePrecision {
    pub fn n_assets(&self) -> usize {
        self.omega.nrows()
    }

    /// `γ̂_j` as a dense vector of length `p − 1` in the order of `Û_{−j}`.
    pub fn gamma_dense(&self, j: usize) -> DVector<f64> {
        let p = self.n_assets();
        let mut g = DVector::zeros(p - 1);
        for &(k, v) in &self.gammas[j] {
            g[if k < j { k } else { k - 1 }] = v;
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct ReturnsPrecision {
    /// `Γ̂`, p x p.
    pub gamma: DMatrix<f64>,
    /// `[ĉov(f)⁻¹ + B̂'Ω̂_sym B̂]⁻¹`, K x K.
    pub k_core: DMatrix<f64>,
}

/// `(Ω + Ω')/2`, exactly symmetric.
pub fn symmetrize(omega: &DMatrix<f64>) -> DMatrix<f64> {
    crate::linalg::symmetrize(omega)
}

struct AssetFit {
    gamma: Vec<(usize, f64)>,
    tau_sq: f64,
    lambda: f64,
}

/// Nodewise regressions on the residuals of a fitted factor model.
pub fn fit_nodewise(fit: &FactorModelFit, config: &NodewiseConfig) -> Result<NodewisePrecision> {
    fit_nodewise_residuals(&fit.residuals, config)
}

/// Nodewise regressions on a p x n residual matrix.
pub fn fit_nodewise_residuals(residuals: &DMatrix<f64>, config: &NodewiseConfig) -> Result<NodewisePrecision> {
    let (p, n) = residuals.shape();
    if p < 2 {
        return Err(Error::InsufficientData(format!("nodewise regression needs p >= 2 assets, got {p}")));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!("nodewise regression needs n >= 3 periods, got {n}")));
    }
    if let Selector::Fixed(l) = config.selector {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::InvalidParameter(format!("fixed lambda must be finite and >= 0, got {l}")));
        }
    }
    let moments = Moments::from_series(residuals, config.standardize);
    let variances: Vec<f64> = (0..p)
        .map(|j| {
            let row = residuals.row(j);
            let mean = row.sum() / n as f64;
            row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
        })
        .collect();
    let cv = match config.selector {
        Selector::Cv => Some(CvMoments::new(residuals, &moments, config)?),
        _ => None,
    };

    let fits: Vec<AssetFit> = (0..p)
        .into_par_iter()
        .map(|j| fit_asset(&moments, cv.as_ref(), j, config))
        .collect::<Result<_>>()?;

    let mut omega = DMatrix::zeros(p, p);
    let mut tau_sq = DVector::zeros(p);
    let mut lambdas = DVector::zeros(p);
    let mut gammas = Vec::with_capacity(p);
    for (j, f) in fits.into_iter().enumerate() {
        let floor = TAU_FLOOR * variances[j];
        if !(f.tau_sq > 0.0 && f.tau_sq >= floor) {
            return Err(Error::DegenerateAsset {
                index: j,
                tau_sq: f.tau_sq,
                floor,
            });
        }
        omega[(j, j)] = 1.0 / f.tau_sq;
        for &(k, g) in &f.gamma {
            omega[(j, k)] = -g / f.tau_sq;
        }
        tau_sq[j] = f.tau_sq;
        lambdas[j] = f.lambda;
        gammas.push(f.gamma);
    }
    let omega_sym = symmetrize(&omega);
    Ok(NodewisePrecision {
        omega,
        omega_sym,
        gammas,
        tau_sq,
        lambdas,
        selector: config.selector,
    })
}

fn fit_asset(moments: &Moments, cv: Option<&CvMoments>, j: usize, config: &NodewiseConfig) -> Result<AssetFit> {
    let target = moments.target(j);
    let finish = |target: &TargetProblem<'_>, state: &lasso::CdState, lambda: f64| AssetFit {
        gamma: target.sparse_coefficients(state),
        tau_sq: target.tau_sq(state),
        lambda,
    };
    match config.selector {
        Selector::Fixed(lambda) => {
            let mut state = target.initial_state();
            target.solve_from(&mut state, lambda)?;
            Ok(finish(&target, &state, lambda))
        }
        Selector::Gic => {
            let grid = log_grid(target.lambda_max(), config.grid_size, config.lambda_min_ratio)?;
            let (p, n) = (moments.dim(), moments.n);
            let yy = target.yy();
            let mut best: Option<(f64, AssetFit)> = None;
            target.walk_path(&grid, config.early_stop, |_, lambda, state| {
                // SSR relative to ‖Û_j‖²_n keeps the criterion free of return units
                let ssr = n as f64 * target.mean_squared_residual(state) / yy;
                let value = gic_value(ssr, target.nonzero(state), p, n);
                if best.as_ref().is_none_or(|(b, _)| value < *b) {
                    best = Some((value, finish(&target, state, lambda)));
                }
                Ok(())
            })?;
            Ok(best.expect("grid is non-empty").1)
        }
        Selector::Cv => {
            let cv = cv.expect("cv moments prepared");
            let grid = log_grid(target.lambda_max(), config.grid_size, config.lambda_min_ratio)?;
            let mut fits = Vec::with_capacity(grid.len());
            let len = target.walk_path(&grid, config.early_stop, |_, lambda, state| {
                fits.push(finish(&target, state, lambda));
                Ok(())
            })?;
            let grid = &grid[..len];
            let mut mse = vec![0.0; len];
            let mut common = len;
            for fold in &cv.folds {
                let t = fold.train.target(j);
                let visited = t.walk_path(grid, false, |i, _, state| {
                    mse[i] += test_error(&fold.test, j, &t.sparse_coefficients(state)) / cv.folds.len() as f64;
                    Ok(())
                })?;
                common = common.min(visited);
            }
            // only penalties reached by every fold are comparable
            Ok(fits.swap_remove(argmin_first(&mse[..common])))
        }
    }
}

/// `‖Û_j − Û_{−j}'g‖²` averaged over the test periods, from test second moments.
fn test_error(test: &DMatrix<f64>, j: usize, coefs: &[(usize, f64)]) -> f64 {
    let mut v = test[(j, j)];
    for &(k, g) in coefs {
        v -= 2.0 * g * test[(k, j)];
    }
    for &(k, g) in coefs {
        for &(l, h) in coefs {
            v += g * h * test[(k, l)];
        }
    }
    v.max(0.0)
}

struct FoldMoments {
    train: Moments,
    test: DMatrix<f64>,
}

/// Training and test moments per fold; one partition is shared by every asset.
struct CvMoments {
    folds: Vec<FoldMoments>,
}

impl CvMoments {
    fn new(residuals: &DMatrix<f64>, full: &Moments, config: &NodewiseConfig) -> Result<Self> {
        let n = residuals.ncols();
        let assignment = lasso::fold_assignment(n, config.cv_folds, config.seed, config.fold_scheme)?;
        let mut folds = Vec::with_capacity(config.cv_folds);
        for fold in 0..config.cv_folds {
            let cols: Vec<usize> = (0..n).filter(|&t| assignment[t] == fold).collect();
            let n_test = cols.len();
            let n_train = n - n_test;
            let sub = residuals.select_columns(cols.iter());
            let test = (&sub * sub.transpose()) / n_test as f64;
            let train_raw = (&full.raw * n as f64 - &test * n_test as f64) / n_train as f64;
            folds.push(FoldMoments {
                train: Moments::from_raw(train_raw, n_train, config.standardize),
                test,
            });
        }
        Ok(Self { folds })
    }
}

/// `Γ̂ = Ω̂ − Ω̂B̂[ĉov(f)⁻¹ + B̂'Ω̂_sym B̂]⁻¹B̂'Ω̂`.
pub fn combine_smw(nodewise: &NodewisePrecision, fit: &FactorModelFit) -> Result<ReturnsPrecision> {
    combine_smw_matrices(&nodewise.omega, &nodewise.omega_sym, &fit.loadings, &fit.factor_cov)
}

pub fn combine_smw_matrices(
    omega: &DMatrix<f64>,
    omega_sym: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    factor_cov: &DMatrix<f64>,
) -> Result<ReturnsPrecision> {
    let p = omega.nrows();
    let k = factor_cov.nrows();
    if omega.shape() != (p, p) || omega_sym.shape() != (p, p) {
        return Err(Error::Dimension {
            context: "precision matrix".into(),
            expected: p,
            actual: omega.ncols(),
        });
    }
    if loadings.shape() != (p, k) {
        return Err(Error::Dimension {
            context: "loadings".into(),
            expected: k,
            actual: loadings.ncols(),
        });
    }
    let cov_inv = spd_inverse(factor_cov, "factor covariance")?;
    let bracket = crate::linalg::symmetrize(&(cov_inv + loadings.transpose() * omega_sym * loadings));
    let k_core = spd_inverse(&bracket, "Woodbury bracket cov(f)^-1 + B'Omega_sym B")?;
    let left = omega * loadings;
    let right = loadings.transpose() * omega;
    let gamma = omega - left * &k_core * right;
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonPositive {
            context: "returns precision has non-finite entries".into(),
            value: f64::NAN,
        });
    }
    Ok(ReturnsPrecision { gamma, k_core })
}

/// Factor model residual precision and returns precision in one call.
pub fn estimate(fit: &FactorModelFit, config: &NodewiseConfig) -> Result<(NodewisePrecision, ReturnsPrecision)> {
    let nw = fit_nodewise(fit, config)?;
    let rp = combine_smw(&nw, fit)?;
    Ok((nw, rp))
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("need |rho| < 1, got {rho}")));
    }
    Ok(())
}

/// Correlation matrix with entries `ρ^{|i−j|}`.
pub fn toeplitz_cov(rho: f64, p: usize) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    Ok(DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32)))
}

/// Tri-diagonal inverse of [`toeplitz_cov`].
pub fn toeplitz_precision_closed_form(rho: f64, p: usize) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    if p < 2 {
        return Err(Error::InvalidParameter(format!("need p >= 2, got {p}")));
    }
    let s = 1.0 / (1.0 - rho * rho);
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            if i == 0 || i == p - 1 {
                s
            } else {
                (1.0 + rho * rho) * s
            }
        } else if i.abs_diff(j) == 1 {
            -rho * s
        } else {
            0.0
        }
    }))
}

/// Direct sum of square blocks.
pub fn block_diag_cov(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let mut size = 0;
    for (b, block) in blocks.iter().enumerate() {
        if !block.is_square() {
            return Err(Error::InvalidParameter(format!(
                "block {b} is {}x{}, not square",
                block.nrows(),
                block.ncols()
            )));
        }
        size += block.nrows();
    }
    let mut out = DMatrix::zeros(size, size);
    let mut at = 0;
    for block in blocks {
        let m = block.nrows();
        out.view_mut((at, at), (m, m)).copy_from(block);
        at += m;
    }
    Ok(out)
}
