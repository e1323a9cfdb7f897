//! Least-squares fit of the observed-factor model `Y = B X + U`.
//!
//! The regression has **no intercept**: any asset-specific mean that the factors do
//! not explain stays in the residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::panel::{FactorPanel, ReturnsPanel};

#[derive(Debug, Clone)]
pub struct FactorModelFit {
    /// `B̂`, p x K.
    pub loadings: DMatrix<f64>,
    /// `Û = Y - B̂X`, p x n.
    pub residuals: DMatrix<f64>,
    /// `n⁻¹XX' - n⁻²X1 1'X'`, K x K.
    pub factor_cov: DMatrix<f64>,
    /// Time average of the returns, length p.
    pub sample_mean: DVector<f64>,
    /// `(XX')⁻¹`, K x K.
    pub gram_inverse: DMatrix<f64>,
}

/// Per-asset time average.
pub fn sample_mean(returns: &ReturnsPanel) -> DVector<f64> {
    row_means(returns.values())
}

pub(crate) fn row_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.ncols() as f64;
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum() / n))
}

/// `n⁻¹XX' - n⁻²X1 1'X'` for a d x n series matrix (factors or returns).
pub fn factor_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols() as f64;
    let mean = row_means(x);
    let mut cov = (x * x.transpose()) / n;
    cov -= &mean * mean.transpose();
    cov
}

/// OLS loadings, residuals, factor covariance and sample mean.
pub fn fit_ols(returns: &ReturnsPanel, factors: &FactorPanel) -> Result<FactorModelFit> {
    factors.check_alignment(returns)?;
    fit_ols_matrices(returns.values(), factors.values(), factors.factor_ids())
}

pub(crate) fn fit_ols_matrices(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    factor_ids: &[String],
) -> Result<FactorModelFit> {
    if y.ncols() != x.ncols() {
        return Err(Error::Dimension {
            context: "factor model periods".into(),
            expected: y.ncols(),
            actual: x.ncols(),
        });
    }
    if x.nrows() >= x.ncols() {
        return Err(Error::InsufficientData(format!(
            "K = {} factors need more than n = {} observations",
            x.nrows(),
            x.ncols()
        )));
    }
    let gram = x * x.transpose();
    let gram_inverse = spd_inverse(&gram, &format!("factor Gram matrix XX' for {{{}}}", factor_ids.join(", ")))?;
    let loadings = (y * x.transpose()) * &gram_inverse;
    let residuals = y - &loadings * x;
    Ok(FactorModelFit {
        loadings,
        residuals,
        factor_cov: factor_covariance(x),
        sample_mean: row_means(y),
        gram_inverse,
    })
}
