//! Coordinate-descent lasso with warm-started regularization paths and two
//! tuning-parameter selectors (GIC and k-fold cross-validation).
//!
//! The objective is `‖r − Zg‖²_n + 2λ‖g‖₁` with `‖v‖²_n = n⁻¹Σv²`, and λ is always
//! reported in that convention. With standardization on, column `k` is divided by
//! its root mean square `‖Z_k‖_n` before fitting, which is the same as penalizing
//! `2λ Σ ‖Z_k‖_n |g_k|` on the original scale; coefficients are returned on the
//! original scale. There is no intercept.
//!
//! Internally every problem is solved from second moments. A set of `d` series is
//! summarized by `V V'/n`; one of the series is the response and the rest are the
//! predictors. Nodewise regression uses the same moments for all `p` targets.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const DEFAULT_GRID_SIZE: usize = 100;
pub const DEFAULT_LAMBDA_MIN_RATIO: f64 = 1e-3;
pub const MAX_SWEEPS: usize = 10_000;
/// An early-stopped path ends once the gain in R² falls below this fraction of R².
pub const PATH_MIN_GAIN: f64 = 1e-5;
/// An early-stopped path ends once R² exceeds this.
pub const PATH_MAX_RSQ: f64 = 0.999;
const MIN_PATH_POINTS: usize = 5;
const TOLERANCE: f64 = 1e-9;

/// How cross-validation assigns observations to folds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FoldScheme {
    /// Seeded uniform random partition.
    #[default]
    Random,
    /// Contiguous blocks of time.
    Blocked,
}

/// Second moments `V V'/n` of `d` series, plus their standardized form.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub n: usize,
    pub raw: DMatrix<f64>,
    gram: DMatrix<f64>,
    scales: Vec<f64>,
}

impl Moments {
    /// `series` is d x n, one series per row.
    pub fn from_series(series: &DMatrix<f64>, standardize: bool) -> Self {
        let n = series.ncols();
        let raw = (series * series.transpose()) / n as f64;
        Self::from_raw(raw, n, standardize)
    }

    pub fn from_raw(raw: DMatrix<f64>, n: usize, standardize: bool) -> Self {
        let d = raw.nrows();
        let scales: Vec<f64> = if standardize {
            (0..d).map(|k| raw[(k, k)].max(0.0).sqrt()).collect()
        } else {
            (0..d).map(|k| if raw[(k, k)] > 0.0 { 1.0 } else { 0.0 }).collect()
        };
        let gram = if standardize {
            DMatrix::from_fn(d, d, |a, b| {
                if scales[a] > 0.0 && scales[b] > 0.0 {
                    raw[(a, b)] / (scales[a] * scales[b])
                } else {
                    0.0
                }
            })
        } else {
            raw.clone()
        };
        Self { n, raw, gram, scales }
    }

    pub fn dim(&self) -> usize {
        self.raw.nrows()
    }

    /// Regression of series `target` on all the others.
    pub fn target(&self, target: usize) -> TargetProblem<'_> {
        let d = self.dim();
        let mut corr = vec![0.0; d];
        let mut coords = Vec::with_capacity(d.saturating_sub(1));
        for k in 0..d {
            if k != target && self.scales[k] > 0.0 {
                corr[k] = self.raw[(k, target)] / self.scales[k];
                coords.push(k);
            }
        }
        TargetProblem {
            gram: &self.gram,
            scales: &self.scales,
            corr,
            yy: self.raw[(target, target)],
            coords,
        }
    }
}

/// One lasso problem in standardized second-moment form.
pub(crate) struct TargetProblem<'a> {
    gram: &'a DMatrix<f64>,
    scales: &'a [f64],
    corr: Vec<f64>,
    yy: f64,
    coords: Vec<usize>,
}

/// Coordinate-descent state; reusing it across λ values gives warm starts.
#[derive(Debug, Clone)]
pub(crate) struct CdState {
    beta: Vec<f64>,
    grad: Vec<f64>,
    active: Vec<usize>,
    in_active: Vec<bool>,
    pub sweeps: usize,
}

impl<'a> TargetProblem<'a> {
    pub fn lambda_max(&self) -> f64 {
        self.coords
            .iter()
            .fold(0.0_f64, |acc, &k| acc.max(self.corr[k].abs()))
    }

    pub fn yy(&self) -> f64 {
        self.yy
    }

    /// Warm-started walk down `grid`, calling `visit(i, λ_i, state)` at each point.
    ///
    /// With `early_stop` the walk ends after the first point (beyond a minimum of
    /// five) at which R² stalls or exceeds [`PATH_MAX_RSQ`]. A point after the first
    /// that fails to converge also ends the walk, keeping the solutions for the larger
    /// penalties. Returns the number of points visited.
    pub fn walk_path<F>(&self, grid: &[f64], early_stop: bool, mut visit: F) -> Result<usize>
    where
        F: FnMut(usize, f64, &CdState) -> Result<()>,
    {
        let mut state = self.initial_state();
        let mut rsq_prev = 0.0;
        for (i, &lambda) in grid.iter().enumerate() {
            match self.solve_from(&mut state, lambda) {
                Ok(()) => {}
                Err(e @ Error::NotConverged { .. }) if i > 0 => {
                    log::debug!("lasso path truncated after {i} points: {e}");
                    return Ok(i);
                }
                Err(e) => return Err(e),
            }
            visit(i, lambda, &state)?;
            if early_stop && self.yy > 0.0 {
                let rsq = 1.0 - self.mean_squared_residual(&state) / self.yy;
                if i + 1 >= MIN_PATH_POINTS && (rsq - rsq_prev < PATH_MIN_GAIN * rsq || rsq > PATH_MAX_RSQ) {
                    return Ok(i + 1);
                }
                rsq_prev = rsq;
            }
        }
        Ok(grid.len())
    }

    pub fn initial_state(&self) -> CdState {
        CdState {
            beta: vec![0.0; self.corr.len()],
            grad: self.corr.clone(),
            active: Vec::new(),
            in_active: vec![false; self.corr.len()],
            sweeps: 0,
        }
    }

    fn column(&self, k: usize) -> &[f64] {
        let d = self.gram.nrows();
        &self.gram.as_slice()[k * d..(k + 1) * d]
    }

    fn refresh_gradient(&self, state: &mut CdState) {
        state.grad.copy_from_slice(&self.corr);
        for &k in &state.active {
            let b = state.beta[k];
            if b != 0.0 {
                sub_scaled(&mut state.grad, self.column(k), b);
            }
        }
    }

    fn update(&self, state: &mut CdState, k: usize, lambda: f64) -> f64 {
        let col = self.column(k);
        let gkk = col[k];
        let old = state.beta[k];
        let z = state.grad[k] + gkk * old;
        let new = soft_threshold(z, lambda) / gkk;
        let delta = new - old;
        if delta != 0.0 {
            if !state.in_active[k] {
                state.in_active[k] = true;
                state.active.push(k);
            }
            state.beta[k] = new;
            sub_scaled(&mut state.grad, col, delta);
        }
        delta.abs()
    }

    /// Runs coordinate descent to convergence at `lambda`, starting from `state`.
    pub fn solve_from(&self, state: &mut CdState, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let tol = |beta: &[f64]| TOLERANCE * (1.0 + beta.iter().fold(0.0_f64, |a, b| a.max(b.abs())));
        let mut sweeps = 0;
        let mut last_change = f64::INFINITY;
        loop {
            if sweeps >= MAX_SWEEPS {
                state.sweeps += sweeps;
                return Err(Error::NotConverged {
                    lambda,
                    sweeps,
                    last_change,
                });
            }
            self.refresh_gradient(state);
            let mut change = 0.0_f64;
            for &k in &self.coords {
                change = change.max(self.update(state, k, lambda));
            }
            sweeps += 1;
            last_change = change;
            if change < tol(&state.beta) {
                break;
            }
            // sweep the active set until it settles, then recheck every coordinate
            while sweeps < MAX_SWEEPS {
                let mut inner = 0.0_f64;
                let n_active = state.active.len();
                for a in 0..n_active {
                    let k = state.active[a];
                    inner = inner.max(self.update(state, k, lambda));
                }
                sweeps += 1;
                last_change = inner;
                if inner < tol(&state.beta) || n_active == 0 {
                    break;
                }
            }
        }
        state.sweeps += sweeps;
        let CdState { active, in_active, beta, .. } = state;
        active.retain(|&k| {
            let keep = beta[k] != 0.0;
            in_active[k] = keep;
            keep
        });
        Ok(())
    }

    /// Coefficients on the original scale, full length `d` (target and unused entries 0).
    pub fn original_coefficients(&self, state: &CdState) -> Vec<f64> {
        state
            .beta
            .iter()
            .zip(self.scales.iter())
            .map(|(&b, &s)| if b != 0.0 { b / s } else { 0.0 })
            .collect()
    }

    /// `‖r − Zg‖²_n` at the current state.
    pub fn mean_squared_residual(&self, state: &CdState) -> f64 {
        let mut cb = 0.0;
        let mut bgrad = 0.0;
        for &k in &state.active {
            let b = state.beta[k];
            cb += self.corr[k] * b;
            bgrad += b * state.grad[k];
        }
        (self.yy - cb - bgrad).max(0.0)
    }

    /// `r'(r − Zg)/n`, the nodewise noise scale.
    pub fn tau_sq(&self, state: &CdState) -> f64 {
        let cb: f64 = state.active.iter().map(|&k| self.corr[k] * state.beta[k]).sum();
        self.yy - cb
    }

    pub fn nonzero(&self, state: &CdState) -> usize {
        state.active.iter().filter(|&&k| state.beta[k] != 0.0).count()
    }

    /// Sparse original-scale coefficients.
    pub fn sparse_coefficients(&self, state: &CdState) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = state
            .active
            .iter()
            .filter(|&&k| state.beta[k] != 0.0)
            .map(|&k| (k, state.beta[k] / self.scales[k]))
            .collect();
        out.sort_by_key(|e| e.0);
        out
    }
}

fn sub_scaled(y: &mut [f64], x: &[f64], a: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi -= xi * a;
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Log-spaced grid from `lambda_max` down to `lambda_max * ratio`.
pub fn log_grid(lambda_max: f64, grid_size: usize, ratio: f64) -> Result<Vec<f64>> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter(format!("grid_size must be >= 2, got {grid_size}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda_min_ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let top = if lambda_max > 0.0 { lambda_max } else { f64::MIN_POSITIVE.sqrt() };
    let lo = ratio.ln();
    let last = (grid_size - 1) as f64;
    let mut grid: Vec<f64> = (0..grid_size)
        .map(|i| top * (lo * i as f64 / last).exp())
        .collect();
    grid[0] = top;
    grid[grid_size - 1] = top * ratio;
    Ok(grid)
}

/// `min ‖r − Zg‖²_n + 2λ‖g‖₁` for a design `Z` (n x m) and response `r` (n).
#[derive(Debug, Clone)]
pub struct LassoProblem {
    design: DMatrix<f64>,
    response: DVector<f64>,
    standardize: bool,
    moments: Moments,
}

/// Solutions along a decreasing λ grid.
#[derive(Debug, Clone)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    /// m x |λ|, original scale.
    pub coefficients: DMatrix<f64>,
    /// `Σ_t residual²` per λ.
    pub ssr: Vec<f64>,
    pub nonzero_counts: Vec<usize>,
}

impl LassoProblem {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>, standardize: bool) -> Result<Self> {
        let (n, m) = design.shape();
        if m < 1 {
            return Err(Error::InvalidParameter("design needs at least one column".into()));
        }
        if n < 2 {
            return Err(Error::InsufficientData(format!("need n >= 2 observations, got {n}")));
        }
        if response.len() != n {
            return Err(Error::Dimension {
                context: "lasso response".into(),
                expected: n,
                actual: response.len(),
            });
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("lasso inputs contain non-finite values".into()));
        }
        let moments = Self::moments_of(&design, &response, standardize);
        Ok(Self {
            design,
            response,
            standardize,
            moments,
        })
    }

    fn moments_of(design: &DMatrix<f64>, response: &DVector<f64>, standardize: bool) -> Moments {
        let (n, m) = design.shape();
        // series matrix: predictors then response, each as a row
        let mut series = DMatrix::zeros(m + 1, n);
        for k in 0..m {
            series.row_mut(k).copy_from(&design.column(k).transpose());
        }
        series.row_mut(m).copy_from(&response.transpose());
        Moments::from_series(&series, standardize)
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }
    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }
    pub fn standardize(&self) -> bool {
        self.standardize
    }
    pub fn n_obs(&self) -> usize {
        self.design.nrows()
    }
    pub fn n_predictors(&self) -> usize {
        self.design.ncols()
    }

    fn target(&self) -> TargetProblem<'_> {
        self.moments.target(self.design.ncols())
    }

    /// Smallest λ at which the all-zero vector is optimal.
    pub fn lambda_max(&self) -> f64 {
        self.target().lambda_max()
    }

    /// Per-coefficient penalty weights on the original scale.
    pub fn penalty_weights(&self) -> Vec<f64> {
        let m = self.design.ncols();
        if self.standardize {
            self.moments.scales[..m].to_vec()
        } else {
            vec![1.0; m]
        }
    }

    pub fn solve(&self, lambda: f64) -> Result<DVector<f64>> {
        let target = self.target();
        let mut state = target.initial_state();
        target.solve_from(&mut state, lambda)?;
        let coefs = target.original_coefficients(&state);
        Ok(DVector::from_iterator(self.n_predictors(), coefs.into_iter().take(self.n_predictors())))
    }

    pub fn path(&self, grid_size: usize, lambda_min_ratio: f64) -> Result<LassoPath> {
        let grid = log_grid(self.lambda_max(), grid_size, lambda_min_ratio)?;
        self.path_on_grid(&grid)
    }

    /// Warm-started solves over a given strictly decreasing grid.
    pub fn path_on_grid(&self, lambdas: &[f64]) -> Result<LassoPath> {
        check_grid(lambdas)?;
        let m = self.n_predictors();
        let n = self.n_obs() as f64;
        let target = self.target();
        let mut state = target.initial_state();
        let mut coefficients = DMatrix::zeros(m, lambdas.len());
        let mut ssr = Vec::with_capacity(lambdas.len());
        let mut nonzero_counts = Vec::with_capacity(lambdas.len());
        for (i, &lambda) in lambdas.iter().enumerate() {
            target.solve_from(&mut state, lambda)?;
            let coefs = target.original_coefficients(&state);
            for k in 0..m {
                coefficients[(k, i)] = coefs[k];
            }
            ssr.push(n * target.mean_squared_residual(&state));
            nonzero_counts.push(target.nonzero(&state));
        }
        Ok(LassoPath {
            lambdas: lambdas.to_vec(),
            coefficients,
            ssr,
            nonzero_counts,
        })
    }

    /// `‖r − Zg‖²_n + 2λ Σ w_k|g_k|` with the problem's penalty weights.
    pub fn objective(&self, coefs: &DVector<f64>, lambda: f64) -> f64 {
        let resid = &self.response - &self.design * coefs;
        let n = self.n_obs() as f64;
        let penalty: f64 = coefs
            .iter()
            .zip(self.penalty_weights())
            .map(|(g, w)| w * g.abs())
            .sum();
        resid.norm_squared() / n + 2.0 * lambda * penalty
    }

    /// Largest violation of the optimality conditions, computed directly from the data.
    pub fn kkt_violation(&self, coefs: &DVector<f64>, lambda: f64) -> f64 {
        kkt_violation(&self.design, &self.response, coefs, lambda, &self.penalty_weights())
    }
}

/// Subgradient optimality check for `‖r − Zg‖²_n + 2λ Σ w_k|g_k|`.
pub fn kkt_violation(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    coefs: &DVector<f64>,
    lambda: f64,
    weights: &[f64],
) -> f64 {
    let n = design.nrows() as f64;
    let resid = response - design * coefs;
    let corr = design.transpose() * resid / n;
    let mut worst = 0.0_f64;
    for k in 0..coefs.len() {
        let bound = lambda * weights[k];
        let v = if coefs[k] != 0.0 {
            (corr[k] - bound * coefs[k].signum()).abs()
        } else {
            (corr[k].abs() - bound).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn check_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidParameter("lambda grid must be finite and non-negative".into()));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("lambda grid must be strictly decreasing".into()));
    }
    Ok(())
}

/// Generalized information criterion `SSR/n + q·log(p−1)·ln(ln n)/n`.
pub fn gic_value(ssr: f64, nonzero: usize, p_ambient: usize, n: usize) -> f64 {
    let n_f = n as f64;
    ssr / n_f + nonzero as f64 * ((p_ambient - 1) as f64).ln() * n_f.ln().ln() / n_f
}

fn check_gic_args(p_ambient: usize, n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("GIC needs n >= 3, got {n}")));
    }
    if p_ambient < 2 {
        return Err(Error::InvalidParameter(format!("GIC needs p >= 2, got {p_ambient}")));
    }
    Ok(())
}

/// Grid point with the smallest GIC; ties go to the larger λ.
pub fn select_gic(path: &LassoPath, p_ambient: usize, n: usize) -> Result<(f64, DVector<f64>)> {
    check_gic_args(p_ambient, n)?;
    let mut best = 0;
    let mut best_value = f64::INFINITY;
    for i in 0..path.lambdas.len() {
        let v = gic_value(path.ssr[i], path.nonzero_counts[i], p_ambient, n);
        if v < best_value {
            best_value = v;
            best = i;
        }
    }
    Ok((path.lambdas[best], path.coefficients.column(best).into_owned()))
}

/// Assigns each of `n` observations to one of `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64, scheme: FoldScheme) -> Result<Vec<usize>> {
    if k < 2 || k > n {
        return Err(Error::InvalidParameter(format!("need 2 <= k <= n for cross-validation, got k = {k}, n = {n}")));
    }
    let base: Vec<usize> = (0..n).map(|i| i * k / n).collect();
    let folds = match scheme {
        FoldScheme::Blocked => base,
        FoldScheme::Random => {
            let mut shuffled = base;
            let mut rng = rng_from_seed(seed);
            shuffled.shuffle(&mut rng);
            shuffled
        }
    };
    let mut sizes = vec![0usize; k];
    for &f in &folds {
        sizes[f] += 1;
    }
    if let Some(f) = sizes.iter().position(|&s| n - s < 2) {
        return Err(Error::InsufficientData(format!(
            "fold {f} leaves {} training observation(s); need at least 2",
            n - sizes[f]
        )));
    }
    Ok(folds)
}

/// Selects λ from `grid` by k-fold cross-validated MSE, then refits on the full sample.
pub fn select_cv(
    problem: &LassoProblem,
    k: usize,
    grid: &[f64],
    seed: u64,
    scheme: FoldScheme,
) -> Result<(f64, DVector<f64>)> {
    check_grid(grid)?;
    let n = problem.n_obs();
    let folds = fold_assignment(n, k, seed, scheme)?;
    let mut mse = vec![0.0; grid.len()];
    for fold in 0..k {
        let train: Vec<usize> = (0..n).filter(|&t| folds[t] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&t| folds[t] == fold).collect();
        let sub = LassoProblem::new(
            problem.design.select_rows(train.iter()),
            problem.response.select_rows(train.iter()),
            problem.standardize,
        )?;
        let path = sub.path_on_grid(grid)?;
        let z_test = problem.design.select_rows(test.iter());
        let r_test = problem.response.select_rows(test.iter());
        for i in 0..grid.len() {
            let resid = &r_test - &z_test * path.coefficients.column(i);
            mse[i] += resid.norm_squared() / test.len() as f64 / k as f64;
        }
    }
    let best = argmin_first(&mse);
    let full = problem.path_on_grid(&grid[..=best])?;
    Ok((grid[best], full.coefficients.column(best).into_owned()))
}

pub(crate) fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}
