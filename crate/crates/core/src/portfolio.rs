//! Portfolio weights and Sharpe-ratio estimators built from a precision matrix `Γ`
//! and a mean vector `μ`.
//!
//! All quantities are per period. `A = 1'Γ1/p`, `F = 1'Γμ/p`, `D = μ'Γμ/p`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::quad_form;

/// Threshold below which `1'Γμ` is treated as zero and `AD − F²` as degenerate.
pub const ZERO_TOL: f64 = 1e-12;
pub const DEFAULT_DELTA: f64 = 1e6;
pub const DEFAULT_RHO1: f64 = 0.01;
pub const DEFAULT_SIGMA: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Afd {
    pub a: f64,
    pub f: f64,
    pub d: f64,
}

impl Afd {
    /// `AD − F²`.
    pub fn frontier(&self) -> f64 {
        self.a * self.d - self.f * self.f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortfolioKind {
    Gmv,
    Markowitz,
    ConstrainedMsr,
    MaxOos,
    EqualWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PortfolioParams {
    pub rho1: Option<f64>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioResult {
    pub weights: DVector<f64>,
    pub kind: PortfolioKind,
    pub params: PortfolioParams,
    /// `Σ_j w_j`.
    pub weight_sum: f64,
    /// `Σ_j |w_j|`.
    pub gross_leverage: f64,
}

impl PortfolioResult {
    fn new(weights: DVector<f64>, kind: PortfolioKind, params: PortfolioParams) -> Self {
        let weight_sum = weights.sum();
        let gross_leverage = weights.iter().map(|w| w.abs()).sum();
        Self {
            weights,
            kind,
            params,
            weight_sum,
            gross_leverage,
        }
    }
}

/// Sign of `1'Γμ`, which decides how the maximum Sharpe ratio is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Positive,
    Negative,
}

impl Branch {
    pub fn sign(self) -> i32 {
        match self {
            Branch::Positive => 1,
            Branch::Negative => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsrEstimates {
    pub msr: f64,
    pub msr_c: f64,
    pub msr_star: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpeEstimates {
    pub gmv_sr: f64,
    pub mmv_sr: f64,
    pub msr: f64,
    pub msr_c: f64,
    pub msr_star: f64,
    pub sr_mos: f64,
    pub branch_indicator: Branch,
}

fn check_dims(gamma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<()> {
    if !gamma.is_square() || gamma.nrows() != mu.len() {
        return Err(Error::Dimension {
            context: "precision matrix and mean vector".into(),
            expected: gamma.nrows(),
            actual: mu.len(),
        });
    }
    Ok(())
}

fn ones(p: usize) -> DVector<f64> {
    DVector::from_element(p, 1.0)
}

pub fn afd(gamma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<Afd> {
    check_dims(gamma, mu)?;
    let p = mu.len() as f64;
    let one = ones(mu.len());
    Ok(Afd {
        a: quad_form(&one, gamma, &one) / p,
        f: quad_form(&one, gamma, mu) / p,
        d: quad_form(mu, gamma, mu) / p,
    })
}

/// `Γ1/(1'Γ1)`.
pub fn gmv_weights(gamma: &DMatrix<f64>) -> Result<PortfolioResult> {
    if !gamma.is_square() {
        return Err(Error::Dimension {
            context: "precision matrix".into(),
            expected: gamma.nrows(),
            actual: gamma.ncols(),
        });
    }
    let g1 = gamma * ones(gamma.nrows());
    let denom = g1.sum();
    if denom.abs() < ZERO_TOL {
        return Err(Error::NonPositive {
            context: "1'Gamma 1 in GMV weights".into(),
            value: denom,
        });
    }
    Ok(PortfolioResult::new(g1 / denom, PortfolioKind::Gmv, PortfolioParams::default()))
}

/// `√p (1'Γμ/p)(1'Γ1/p)^{-1/2}`.
pub fn gmv_sharpe(gamma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<f64> {
    let v = afd(gamma, mu)?;
    if !(v.a > 0.0) {
        return Err(Error::NonPositive {
            context: "1'Gamma 1 in GMV Sharpe ratio".into(),
            value: v.a,
        });
    }
    Ok((mu.len() as f64).sqrt() * v.f / v.a.sqrt())
}

fn frontier(gamma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<Afd> {
    let v = afd(gamma, mu)?;
    if !(v.frontier() > ZERO_TOL) {
        return Err(Error::DegenerateFrontier(v.frontier()));
    }
    Ok(v)
}

/// Minimum-variance weights subject to `w'1 = 1` and `w'μ = ρ₁`.
///
/// The weights are `c₁Γ1 + c₂Γμ` with `(c₁, c₂)` solving both constraints. For a
/// symmetric `Γ` this is the usual closed form in `A`, `F`, `D`; for the
/// non-symmetric nodewise estimate it still meets the constraints exactly.
pub fn markowitz_weights(gamma: &DMatrix<f64>, mu: &DVector<f64>, rho1: f64) -> Result<PortfolioResult> {
    frontier(gamma, mu)?;
    let g1 = gamma * ones(mu.len());
    let gm = gamma * mu;
    // [1'Γ1 1'Γμ; μ'Γ1 μ'Γμ] (c₁, c₂)' = (1, ρ₁)'
    let (a11, a12, a21, a22) = (g1.sum(), gm.sum(), mu.dot(&g1), mu.dot(&gm));
    let det = a11 * a22 - a12 * a21;
    let scale = (a11 * a22).abs().max((a12 * a21).abs()).max(f64::MIN_POSITIVE);
    if !(det.abs() > ZERO_TOL * scale) {
        return Err(Error::DegenerateFrontier(det));
    }
    let c1 = (a22 - rho1 * a12) / det;
    let c2 = (rho1 * a11 - a21) / det;
    let w = g1 * c1 + gm * c2;
    Ok(PortfolioResult::new(
        w,
        PortfolioKind::Markowitz,
        PortfolioParams {
            rho1: Some(rho1),
            ..Default::default()
        },
    ))
}

/// `ρ₁ √(p(AD − F²)/(Aρ₁² − 2Fρ₁ + D))`.
pub fn markowitz_sharpe(gamma: &DMatrix<f64>, mu: &DVector<f64>, rho1: f64) -> Result<f64> {
    let v = frontier(gamma, mu)?;
    let q = v.a * rho1 * rho1 - 2.0 * v.f * rho1 + v.d;
    if !(q > 0.0) {
        return Err(Error::NonPositive {
            context: "Markowitz variance form A rho1^2 - 2 F rho1 + D".into(),
            value: q,
        });
    }
    Ok(rho1 * (mu.len() as f64 * v.frontier() / q).sqrt())
}

/// `μ'Γμ`, the squared unconstrained maximum Sharpe ratio.
pub fn msr_squared(gamma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<f64> {
    check_dims(gamma, mu)?;
    let v = quad_form(mu, gamma, mu);
    if v < 0.0 {
        return Err(Error::NonPositive {
            context: "mu'Gamma mu".into(),
            value: v,
        });
    }
    Ok(v)
}

/// `μ'Γμ − (1'Γμ)²/(1'Γ1)`, the squared maximum Sharpe ratio of unit-sum portfolios.
pub fn msr_c_squared(gamma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<f64> {
    let msr2 = msr_squared(gamma, mu)?;
    let one = ones(mu.len());
    let a = quad_form(&one, gamma, &one);
    if !(a > 0.0) {
        return Err(Error::NonPositive {
            context: "1'Gamma 1".into(),
            value: a,
        });
    }
    let f = quad_form(&one, gamma, mu);
    let v = msr2 - f * f / a;
    // Cauchy-Schwarz makes this non-negative; allow rounding below zero
    if v < -ZERO_TOL * (1.0 + msr2) {
        return Err(Error::NonPositive {
            context: "constrained maximum Sharpe ratio".into(),
            value: v,
        });
    }
    Ok(v.max(0.0))
}

fn branch_of(gamma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<Branch> {
    let s = quad_form(&ones(mu.len()), gamma, mu);
    if s.abs() < ZERO_TOL {
        return Err(Error::AmbiguousBranch(s));
    }
    Ok(if s > 0.0 { Branch::Positive } else { Branch::Negative })
}

/// `MSR`, `MSR_c`, and `MSR*` (the former when `1'Γμ > 0`, the latter otherwise).
pub fn constrained_msr(gamma: &DMatrix<f64>, mu: &DVector<f64>) -> Result<MsrEstimates> {
    let msr = msr_squared(gamma, mu)?.sqrt();
    let msr_c = msr_c_squared(gamma, mu)?.sqrt();
    let branch = branch_of(gamma, mu)?;
    let msr_star = match branch {
        Branch::Positive => msr,
        Branch::Negative => msr_c,
    };
    Ok(MsrEstimates {
        msr,
        msr_c,
        msr_star,
        branch,
    })
}

/// Unit-sum maximum-Sharpe weights.
///
/// With `1'Γμ > 0` this is `Γμ/(1'Γμ)`. Otherwise the supremum is not attained and
/// the weights `(δu', 1 − δ1'u)'` approach it as `δ → ∞`, where `u` is the unit
/// direction in the first `p − 1` coordinates of the constrained optimum.
pub fn constrained_msr_weights(gamma: &DMatrix<f64>, mu: &DVector<f64>, delta: f64) -> Result<PortfolioResult> {
    check_dims(gamma, mu)?;
    let branch = branch_of(gamma, mu)?;
    let params = PortfolioParams {
        delta: Some(delta),
        ..Default::default()
    };
    let gmu = gamma * mu;
    let w = match branch {
        Branch::Positive => {
            let s = gmu.sum();
            gmu / s
        }
        Branch::Negative => {
            if !(delta > 0.0) || !delta.is_finite() {
                return Err(Error::InvalidParameter(format!("delta must be positive and finite, got {delta}")));
            }
            let msr_c = msr_c_squared(gamma, mu)?.sqrt();
            if !(msr_c > 0.0) {
                return Err(Error::NonPositive {
                    context: "constrained maximum Sharpe ratio".into(),
                    value: msr_c,
                });
            }
            let p = mu.len();
            let one = ones(p);
            let a = quad_form(&one, gamma, &one);
            let s = gmu.sum();
            let z = gamma * (mu - &one * (s / a)) / msr_c;
            // (A'A)⁻¹A'z with A = (I_{p−1}, −1)'
            let last = z[p - 1];
            let az = DVector::from_fn(p - 1, |i, _| z[i] - last);
            let mean = az.sum() / p as f64;
            let v = az.map(|x| x - mean);
            let norm = v.norm();
            if !(norm > 0.0) {
                return Err(Error::NonPositive {
                    context: "norm of the constrained direction".into(),
                    value: norm,
                });
            }
            let u = v / norm;
            let mut w = DVector::zeros(p);
            w.rows_mut(0, p - 1).copy_from(&(&u * delta));
            w[p - 1] = 1.0 - delta * u.sum();
            w
        }
    };
    Ok(PortfolioResult::new(w, PortfolioKind::ConstrainedMsr, params))
}

/// `σΓμ/√(μ'Γμ)`, the maximum-mean portfolio with risk `σ`.
pub fn mos_weights(gamma: &DMatrix<f64>, mu: &DVector<f64>, sigma: f64) -> Result<PortfolioResult> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("risk bound sigma must be positive, got {sigma}")));
    }
    let q = msr_squared(gamma, mu)?;
    if !(q > 0.0) {
        return Err(Error::NonPositive {
            context: "mu'Gamma mu in out-of-sample weights".into(),
            value: q,
        });
    }
    Ok(PortfolioResult::new(
        gamma * mu * (sigma / q.sqrt()),
        PortfolioKind::MaxOos,
        PortfolioParams {
            sigma: Some(sigma),
            ..Default::default()
        },
    ))
}

/// `μ'Γ̂μ̂ / √(μ̂'Γ̂'Σ_yΓ̂μ̂)`: estimated weights evaluated under the true moments.
pub fn mos_sharpe(
    gamma_hat: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    sigma_y: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> Result<f64> {
    check_dims(gamma_hat, mu_hat)?;
    check_dims(sigma_y, mu)?;
    let g = gamma_hat * mu_hat;
    let den = quad_form(&g, sigma_y, &g);
    if !(den > 0.0) {
        return Err(Error::NonPositive {
            context: "out-of-sample variance of the maximum-Sharpe weights".into(),
            value: den,
        });
    }
    Ok(mu.dot(&g) / den.sqrt())
}

/// `w'μ/√(w'Σw)`.
pub fn portfolio_sharpe(weights: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    check_dims(sigma, mu)?;
    if weights.len() != mu.len() {
        return Err(Error::Dimension {
            context: "portfolio weights".into(),
            expected: mu.len(),
            actual: weights.len(),
        });
    }
    let var = quad_form(weights, sigma, weights);
    if !(var > 0.0) {
        return Err(Error::NonPositive {
            context: "portfolio variance".into(),
            value: var,
        });
    }
    Ok(weights.dot(mu) / var.sqrt())
}

/// Portfolio whose weights are estimated and whose Sharpe ratio is taken under the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PluginKind {
    Gmv,
    Markowitz { rho1: f64 },
    ConstrainedMsr,
}

pub fn plugin_sharpe(
    kind: PluginKind,
    gamma_hat: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    sigma_y: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> Result<f64> {
    let w = match kind {
        PluginKind::Gmv => gmv_weights(gamma_hat)?,
        PluginKind::Markowitz { rho1 } => markowitz_weights(gamma_hat, mu_hat, rho1)?,
        PluginKind::ConstrainedMsr => {
            if branch_of(gamma_hat, mu_hat)? == Branch::Negative {
                return Err(Error::InvalidParameter(
                    "plug-in Sharpe ratio is defined only when 1'Gamma mu > 0".into(),
                ));
            }
            constrained_msr_weights(gamma_hat, mu_hat, DEFAULT_DELTA)?
        }
    };
    portfolio_sharpe(&w.weights, mu, sigma_y)
}

pub fn equal_weights(p: usize) -> PortfolioResult {
    PortfolioResult::new(
        DVector::from_element(p, 1.0 / p as f64),
        PortfolioKind::EqualWeight,
        PortfolioParams::default(),
    )
}

/// Every Sharpe-ratio estimate from `Γ` and `μ`. The out-of-sample ratio evaluates
/// the estimated direction under `sigma_y` with `μ` on both sides.
pub fn sharpe_estimates(
    gamma: &DMatrix<f64>,
    mu: &DVector<f64>,
    rho1: f64,
    sigma_y: &DMatrix<f64>,
) -> Result<SharpeEstimates> {
    let m = constrained_msr(gamma, mu)?;
    Ok(SharpeEstimates {
        gmv_sr: gmv_sharpe(gamma, mu)?,
        mmv_sr: markowitz_sharpe(gamma, mu, rho1)?,
        msr: m.msr,
        msr_c: m.msr_c,
        msr_star: m.msr_star,
        sr_mos: mos_sharpe(gamma, mu, sigma_y, mu)?,
        branch_indicator: m.branch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn afd_examples() {
        let r = afd(&DMatrix::identity(3, 3), &DVector::zeros(3)).unwrap();
        assert_eq!((r.a, r.f, r.d), (1.0, 0.0, 0.0));
        let r = afd(&DMatrix::identity(2, 2), &v(&[0.3, 0.4])).unwrap();
        assert!((r.a - 1.0).abs() < 1e-15);
        assert!((r.f - 0.35).abs() < 1e-15);
        assert!((r.d - 0.125).abs() < 1e-15);
        let r2 = afd(&(DMatrix::identity(2, 2) * 2.0), &v(&[0.3, 0.4])).unwrap();
        assert_eq!(r2.a, 2.0 * r.a);
    }

    #[test]
    fn gmv_examples() {
        let w = gmv_weights(&DMatrix::identity(4, 4)).unwrap();
        assert!(w.weights.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let w = gmv_weights(&DMatrix::from_diagonal(&v(&[2.0, 1.0, 1.0]))).unwrap();
        assert_eq!(w.weights, v(&[0.5, 0.25, 0.25]));
        assert!((gmv_sharpe(&DMatrix::identity(4, 4), &DVector::from_element(4, 0.1)).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(gmv_sharpe(&DMatrix::identity(4, 4), &DVector::zeros(4)).unwrap(), 0.0);
        assert!(gmv_weights(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn markowitz_constraints_and_degeneracy() {
        let g = DMatrix::identity(2, 2);
        let mu = v(&[0.3, 0.4]);
        let w = markowitz_weights(&g, &mu, 0.35).unwrap();
        assert!((w.weight_sum - 1.0).abs() < 1e-12);
        assert!((w.weights.dot(&mu) - 0.35).abs() < 1e-12);
        assert_eq!(markowitz_sharpe(&g, &mu, 0.0).unwrap(), 0.0);
        // equal means: the frontier collapses to a point
        let flat = DVector::from_element(3, 0.01);
        assert!(matches!(
            markowitz_weights(&DMatrix::identity(3, 3), &flat, 0.01),
            Err(Error::DegenerateFrontier(_))
        ));
    }

    #[test]
    fn msr_examples() {
        let g = DMatrix::identity(2, 2);
        let m = constrained_msr(&g, &v(&[0.3, 0.4])).unwrap();
        assert!((m.msr - 0.5).abs() < 1e-15);
        assert_eq!(m.branch, Branch::Positive);
        assert_eq!(m.msr_star, m.msr);
        let m = constrained_msr(&g, &v(&[-0.3, -0.4])).unwrap();
        assert_eq!(m.branch, Branch::Negative);
        assert!((m.msr_c * m.msr_c - 0.005).abs() < 1e-15);
        assert!((m.msr_star - 0.0707107).abs() < 1e-7);
        // 1'Γμ = 0 leaves the constrained ratio equal to the unconstrained one
        let mu = v(&[0.2, -0.2]);
        assert!((msr_c_squared(&g, &mu).unwrap() - msr_squared(&g, &mu).unwrap()).abs() < 1e-15);
        assert!(matches!(constrained_msr(&g, &mu), Err(Error::AmbiguousBranch(_))));
    }

    #[test]
    fn msr_weight_examples() {
        let g = DMatrix::identity(2, 2);
        let w = constrained_msr_weights(&g, &v(&[0.3, 0.7]), DEFAULT_DELTA).unwrap();
        assert!((w.weights - v(&[0.3, 0.7])).amax() < 1e-15);
        for delta in [1.0, 10.0, 1e6] {
            let w = constrained_msr_weights(&g, &v(&[-0.3, -0.4]), delta).unwrap();
            assert!((w.weight_sum - 1.0).abs() < 1e-9 * delta);
        }
        assert!(constrained_msr_weights(&g, &v(&[-0.3, -0.4]), 0.0).is_err());
    }

    #[test]
    fn mos_examples() {
        let g = DMatrix::identity(2, 2);
        let mu = v(&[0.3, 0.4]);
        let w = mos_weights(&g, &mu, 0.04).unwrap();
        assert!((&w.weights - v(&[0.024, 0.032])).amax() < 1e-15);
        let w2 = mos_weights(&g, &mu, 0.08).unwrap();
        assert!((w2.weights - &w.weights * 2.0).amax() < 1e-15);
        assert!(mos_weights(&g, &DVector::zeros(2), 0.04).is_err());
        let sr = mos_sharpe(&g, &mu, &g, &mu).unwrap();
        assert!((sr - 0.5).abs() < 1e-15);
    }

    #[test]
    fn plugin_rejects_negative_branch() {
        let g = DMatrix::identity(2, 2);
        let mu = v(&[-0.3, -0.4]);
        assert!(plugin_sharpe(PluginKind::ConstrainedMsr, &g, &mu, &g, &mu).is_err());
        let sr = plugin_sharpe(PluginKind::ConstrainedMsr, &g, &v(&[0.3, 0.4]), &g, &v(&[0.3, 0.4])).unwrap();
        assert!((sr - 0.5).abs() < 1e-15);
    }
}
