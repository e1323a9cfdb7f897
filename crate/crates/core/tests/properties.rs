mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use nodewise::backtest::{drift_weights, net_return};
use nodewise::factor_model::factor_covariance;
use nodewise::portfolio::{self, Branch};
use nodewise::precision::{combine_smw_matrices, fit_nodewise_residuals, symmetrize};
use nodewise::{fit_ols, FactorPanel, LassoProblem, NodewiseConfig, ReturnsPanel, Selector};
use proptest::prelude::*;

fn lasso_instance(seed: u64, n: usize, m: usize) -> LassoProblem {
    let mut r = rng(seed);
    let z = normal_matrix(&mut r, n, m);
    let beta = DVector::from_fn(m, |k, _| if k % 3 == 0 { 1.0 / (k + 1) as f64 } else { 0.0 });
    let y = &z * beta + normal_vector(&mut r, n) * 0.5;
    LassoProblem::new(z, y, true).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lasso_solution_is_optimal(seed in any::<u64>(), n in 10usize..60, m in 1usize..25, frac in 0.0f64..1.0) {
        let prob = lasso_instance(seed, n, m);
        let lambda = prob.lambda_max() * frac;
        let g = prob.solve(lambda).unwrap();
        prop_assert!(prob.kkt_violation(&g, lambda) <= 1e-7);
        let obj = prob.objective(&g, lambda);
        prop_assert!(obj <= prob.objective(&DVector::zeros(m), lambda) + 1e-9);
        if n > m + 1 {
            let z = prob.design();
            let ols = (z.transpose() * z).cholesky().unwrap().solve(&(z.transpose() * prob.response()));
            prop_assert!(obj <= prob.objective(&ols, lambda) + 1e-9);
        }
        let again = prob.solve(lambda).unwrap();
        prop_assert!(g.iter().zip(again.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn lasso_is_equivariant_to_column_scaling(seed in any::<u64>(), c in 0.1f64..10.0, frac in 0.05f64..0.9) {
        let prob = lasso_instance(seed, 40, 8);
        let lambda = prob.lambda_max() * frac;
        let g = prob.solve(lambda).unwrap();
        let mut z = prob.design().clone();
        z.column_mut(2).scale_mut(c);
        let scaled = LassoProblem::new(z, prob.response().clone(), true).unwrap();
        let gs = scaled.solve(lambda).unwrap();
        for k in 0..8 {
            let expect = if k == 2 { g[k] / c } else { g[k] };
            prop_assert!((gs[k] - expect).abs() <= 1e-8, "k={} {} vs {}", k, gs[k], expect);
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_factors(seed in any::<u64>(), p in 2usize..15, k in 1usize..4) {
        let mut r = rng(seed);
        let n = 40;
        let f = normal_matrix(&mut r, k, n);
        let y = normal_matrix(&mut r, p, k) * &f + normal_matrix(&mut r, p, n);
        let fp = FactorPanel::from_matrix(f.clone()).unwrap();
        let fit = fit_ols(&ReturnsPanel::from_matrix(y.clone()).unwrap(), &fp).unwrap();
        let scale = y.amax() * f.amax();
        prop_assert!((&fit.residuals * f.transpose()).amax() / (n as f64 * scale) <= 1e-10);
        // projecting the residuals again leaves nothing to explain
        let refit = fit_ols(&ReturnsPanel::from_matrix(fit.residuals.clone()).unwrap(), &fp).unwrap();
        prop_assert!(refit.loadings.amax() <= 1e-10);
        // two-pass covariance
        let means: Vec<f64> = (0..k).map(|i| f.row(i).sum() / n as f64).collect();
        let two_pass = DMatrix::from_fn(k, k, |a, b| {
            (0..n).map(|t| (f[(a, t)] - means[a]) * (f[(b, t)] - means[b])).sum::<f64>() / n as f64
        });
        prop_assert!(max_abs_diff(&fit.factor_cov, &two_pass) <= 1e-12);
    }

    #[test]
    fn smw_reproduces_population_inverse(seed in any::<u64>(), p in 2usize..30, k in 1usize..6) {
        let mut r = rng(seed);
        let sigma_n = random_spd(&mut r, p, 0.5);
        let cov_f = random_spd(&mut r, k, 0.5);
        let b = normal_matrix(&mut r, p, k);
        let omega = naive_inverse(&sigma_n);
        let omega = symmetrize(&omega);
        let g = combine_smw_matrices(&omega, &omega, &b, &cov_f).unwrap().gamma;
        let sigma_y = &b * &cov_f * b.transpose() + &sigma_n;
        prop_assert!(max_abs_diff(&g, &naive_inverse(&sigma_y)) <= 1e-8);
    }

    #[test]
    fn nodewise_rows_respect_tau_bound(seed in any::<u64>(), p in 3usize..12) {
        let mut r = rng(seed);
        let n = 50;
        let chol = random_spd(&mut r, p, 0.3).cholesky().unwrap().l();
        let u = chol * normal_matrix(&mut r, p, n);
        for selector in [Selector::Gic, Selector::Cv] {
            let nw = fit_nodewise_residuals(&u, &NodewiseConfig { seed, ..NodewiseConfig::with_selector(selector) }).unwrap();
            prop_assert!(nw.omega_sym == nw.omega_sym.transpose());
            for j in 0..p {
                let u_minus = u.clone().remove_row(j);
                let resid = u.row(j) - nw.gamma_dense(j).transpose() * u_minus;
                let msr = resid.norm_squared() / n as f64;
                prop_assert!(nw.tau_sq[j] > 0.0);
                prop_assert!(nw.tau_sq[j] >= msr - 1e-9);
                prop_assert!((nw.omega[(j, j)] - 1.0 / nw.tau_sq[j]).abs() <= 1e-9 * nw.omega[(j, j)].abs());
            }
        }
    }

    #[test]
    fn constrained_msr_never_exceeds_msr(seed in any::<u64>(), p in 2usize..20) {
        let mut r = rng(seed);
        let g = random_spd(&mut r, p, 0.2);
        let mu = normal_vector(&mut r, p) * 0.1;
        let msr2 = portfolio::msr_squared(&g, &mu).unwrap();
        let msr_c2 = portfolio::msr_c_squared(&g, &mu).unwrap();
        let one = DVector::from_element(p, 1.0);
        let f = one.dot(&(&g * &mu));
        let a = one.dot(&(&g * &one));
        prop_assert!(msr_c2 >= 0.0);
        prop_assert!(msr_c2 <= msr2 + 1e-12);
        prop_assert!((msr_c2 - (msr2 - f * f / a).max(0.0)).abs() <= 1e-12 * (1.0 + msr2));
        if let Ok(m) = portfolio::constrained_msr(&g, &mu) {
            if m.branch == Branch::Positive {
                prop_assert!(portfolio::gmv_sharpe(&g, &mu).unwrap() <= m.msr_star + 1e-9);
            }
        }
    }

    #[test]
    fn sharpe_and_weight_homogeneity(seed in any::<u64>(), p in 3usize..15, c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let g = random_spd(&mut r, p, 0.2);
        let mu = normal_vector(&mut r, p) * 0.1;
        let gc = &g * c;
        let root = c.sqrt();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * (1.0 + a.abs().max(b.abs()));
        // every ratio is homogeneous of degree 1/2 in Γ
        prop_assert!(close(portfolio::gmv_sharpe(&gc, &mu).unwrap(), root * portfolio::gmv_sharpe(&g, &mu).unwrap()));
        if let (Ok(a), Ok(b)) = (portfolio::markowitz_sharpe(&gc, &mu, 0.01), portfolio::markowitz_sharpe(&g, &mu, 0.01)) {
            prop_assert!(close(a, root * b));
        }
        prop_assert!(close(portfolio::msr_squared(&gc, &mu).unwrap(), c * portfolio::msr_squared(&g, &mu).unwrap()));
        prop_assert!(close(portfolio::msr_c_squared(&gc, &mu).unwrap(), c * portfolio::msr_c_squared(&g, &mu).unwrap()));
        // unit-sum weights do not depend on the scale of Γ
        let wg = portfolio::gmv_weights(&g).unwrap().weights;
        prop_assert!((portfolio::gmv_weights(&gc).unwrap().weights - &wg).amax() <= 1e-10 * (1.0 + wg.amax()));
        if let (Ok(a), Ok(b)) = (portfolio::markowitz_weights(&gc, &mu, 0.01), portfolio::markowitz_weights(&g, &mu, 0.01)) {
            prop_assert!((a.weights - &b.weights).amax() <= 1e-9 * (1.0 + b.weights.amax()));
        }
        // the risk-targeted weights scale with √c
        let wm = portfolio::mos_weights(&g, &mu, 0.04).unwrap().weights;
        let wmc = portfolio::mos_weights(&gc, &mu, 0.04).unwrap().weights;
        prop_assert!((wmc - &wm * root).amax() <= 1e-10 * (1.0 + root * wm.amax()));
    }

    #[test]
    fn drift_preserves_the_budget(w in prop::collection::vec(-1.0f64..1.0, 2..10), seed in any::<u64>()) {
        let p = w.len();
        let mut w = DVector::from_vec(w);
        w[p - 1] = 1.0 - w.rows(0, p - 1).sum();
        let mut r = rng(seed);
        let y = normal_vector(&mut r, p) * 0.05;
        prop_assume!((1.0 + w.dot(&y)).abs() > 1e-3);
        let d = drift_weights(&w, &y).unwrap();
        prop_assert!((d.sum() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn costs_only_reduce_returns(y in -0.5f64..0.5, c in 1e-6f64..0.05, turnover in 1e-6f64..4.0) {
        prop_assert!(net_return(y, c, turnover) < y);
        prop_assert_eq!(net_return(y, 0.0, turnover), y);
    }
}

// Coordinate descent visits predictors in index order and stops at a relative
// change of 1e-9, so a reordered problem agrees only to that tolerance.
#[test]
fn nodewise_is_permutation_equivariant() {
    let mut r = rng(11);
    let (p, n) = (8, 60);
    let chol = random_spd(&mut r, p, 0.3).cholesky().unwrap().l();
    let u = chol * normal_matrix(&mut r, p, n);
    let perm = [5, 2, 7, 0, 3, 6, 1, 4];
    let up = DMatrix::from_fn(p, n, |i, t| u[(perm[i], t)]);
    for selector in [Selector::Gic, Selector::Cv, Selector::Fixed(0.05)] {
        let cfg = NodewiseConfig::with_selector(selector);
        let a = fit_nodewise_residuals(&u, &cfg).unwrap().omega;
        let b = fit_nodewise_residuals(&up, &cfg).unwrap().omega;
        let a_perm = DMatrix::from_fn(p, p, |i, j| a[(perm[i], perm[j])]);
        let scale = a.amax();
        assert!(
            max_abs_diff(&a_perm, &b) <= 1e-8 * scale,
            "{selector:?}: {}",
            max_abs_diff(&a_perm, &b)
        );
    }
}

#[test]
fn sample_covariance_is_centered() {
    let x = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 2.0, 2.0, 2.0]);
    let c = factor_covariance(&x);
    assert!((c[(0, 0)] - 1.25).abs() < 1e-15);
    assert_eq!(c[(1, 1)], 0.0);
    assert_eq!(c[(0, 1)], 0.0);
}
