mod common;

use common::*;
use nodewise::precision::toeplitz_precision_closed_form;
use nodewise::rng::rng_from_seed;
use nodewise::simulation::{
    build_true_covariance, generate_panel, oracle_nodewise_diagnostic, run_simulation, ErrorStructure, PRule,
    SimConfig,
};
use nodewise::{NodewiseConfig, Selector};

#[test]
fn errors_are_finite_and_non_negative() {
    for (p_rule, structure) in [
        (PRule::HalfN, ErrorStructure::Toeplitz(0.25)),
        (PRule::ThreeHalvesN, ErrorStructure::Toeplitz(0.75)),
        (PRule::HalfN, ErrorStructure::Blocks(vec![5, 10])),
    ] {
        let mut config = SimConfig::new(40);
        config.p_rule = p_rule;
        config.structure = structure;
        config.replications = 4;
        let report = run_simulation(&config).unwrap();
        let failed: Vec<_> = report.records.iter().filter_map(|r| r.outcome.as_ref().err()).collect();
        assert!(failed.is_empty(), "{:?}: {failed:?}", config.structure);
        for rec in &report.records {
            let sq = rec.outcome.as_ref().unwrap();
            assert!(sq.errors().iter().all(|e| e.is_finite() && *e >= 0.0));
            assert!(sq.target.iter().all(|t| t.is_finite() && *t >= 0.0));
        }
    }
}

#[test]
fn reports_depend_only_on_the_seed() {
    let mut config = SimConfig::new(40);
    config.replications = 3;
    config.seed = 99;
    let a = run_simulation(&config).unwrap();
    let b = run_simulation(&config).unwrap();
    assert_eq!(a.mean_errors, b.mean_errors);
    config.seed = 100;
    let c = run_simulation(&config).unwrap();
    assert_ne!(a.mean_errors, c.mean_errors);
}

#[test]
fn cv_selector_simulation_runs() {
    let mut config = SimConfig::new(40);
    config.replications = 2;
    config.nodewise = NodewiseConfig::with_selector(Selector::Cv);
    let report = run_simulation(&config).unwrap();
    assert_eq!(report.failures, 0);
    assert!(report.mean_errors.iter().all(|e| e.is_finite()));
}

#[test]
fn oracle_diagnostic_tracks_the_error_precision() {
    // unit-variance errors with Toeplitz correlation: the oracle target is the
    // closed-form tridiagonal inverse
    let (p, n, rho) = (10, 2000, 0.5);
    let chol = nodewise::precision::toeplitz_cov(rho, p).unwrap().cholesky().unwrap().l();
    let u = chol * normal_matrix(&mut rng(4), p, n);
    let nw = oracle_nodewise_diagnostic(&u, &NodewiseConfig::default()).unwrap();
    let err = max_abs_diff(&nw.omega_sym, &toeplitz_precision_closed_form(rho, p).unwrap());
    assert!(err < 0.2, "max error {err}");
}

#[test]
fn generated_panels_match_the_population_moments() {
    let mut config = SimConfig::new(20_000);
    config.p_rule = PRule::Explicit(6);
    let truth = build_true_covariance(&config, &mut rng_from_seed(1)).unwrap();
    let panel = generate_panel(&truth, 20_000, 2).unwrap();
    let y = panel.returns.values();
    let mean = nodewise::factor_model::sample_mean(&panel.returns);
    let cov = nodewise::factor_model::factor_covariance(y);
    let scale = truth.sigma_y.amax();
    assert!((mean - &truth.mu).amax() < 6.0 * (scale / 20_000.0).sqrt());
    assert!(max_abs_diff(&cov, &truth.sigma_y) < 0.05 * scale);
    // same seed, same panel
    let again = generate_panel(&truth, 20_000, 2).unwrap();
    assert_eq!(again.returns.values(), y);
}
