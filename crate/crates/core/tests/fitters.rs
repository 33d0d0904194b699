mod common;

use approx::assert_relative_eq;
use clmult_core::models::{mvn, quadexp, CovariateLevel, FitOptions};
use clmult_core::simgen::{enumeration_conditional_log_probs, quadexp_enumeration_oracle};
use clmult_core::{fit, read_clustered, write_clustered, ModelKind};
use common::{fd_gradient, objective, relative_gap, small_instance};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn analytic_scores_match_central_differences() {
    for model in ModelKind::ALL {
        for seed in 0..5 {
            let (_, d) = small_instance(model, 100 + seed);
            let f = fit(model, &d, &FitOptions::default()).unwrap();
            let theta = f.theta_hat.map(|v| v + 0.05);
            let (_, score) = objective(&f, &d, &theta);
            let fd = fd_gradient(|t| objective(&f, &d, t).0, &theta, 1e-5);
            let gap = relative_gap(&score, &fd);
            assert!(gap < 1e-5, "{model} seed {seed}: relative gap {gap:e}");
        }
    }
}

#[test]
fn score_vanishes_at_the_estimate() {
    for model in ModelKind::ALL {
        let (_, d) = small_instance(model, 7);
        let f = fit(model, &d, &FitOptions::default()).unwrap();
        assert!(f.converged, "{model}");
        let (_, score) = objective(&f, &d, &f.theta_hat);
        assert!(score.amax() <= 1e-6, "{model}: {:e}", score.amax());
    }
}

#[test]
fn mvn_h_hat_is_minus_hessian_over_n() {
    let (_, d) = small_instance(ModelKind::Mvn, 3);
    let f = fit(ModelKind::Mvn, &d, &FitOptions::default()).unwrap();
    let beta = f.beta();
    let p = beta.len();
    let mut hess = DMatrix::zeros(p, p);
    for k in 0..p {
        let col = fd_gradient(|b| objective(&f, &d, b).1[k], &beta, 1e-5);
        hess.set_row(k, &col.transpose());
    }
    let h_fd = -hess / d.n() as f64;
    for (a, b) in f.h_hat.iter().zip(h_fd.iter()) {
        assert_relative_eq!(*a, *b, max_relative = 1e-4, epsilon = 1e-8);
    }
}

#[test]
fn naive_covariance_is_inverse_h() {
    let (_, d) = small_instance(ModelKind::Probit, 11);
    let f = fit(ModelKind::Probit, &d, &FitOptions::default().naive(true)).unwrap();
    let prod = &f.gamma_hat * &f.h_hat;
    for (a, b) in prod
        .iter()
        .zip(DMatrix::<f64>::identity(prod.nrows(), prod.ncols()).iter())
    {
        assert!((a - b).abs() < 1e-8);
    }
    let sandwich = f.covariance(false).unwrap();
    assert_eq!(sandwich.nrows(), f.gamma_hat.nrows());
}

#[test]
fn std_errors_use_cluster_count() {
    let (_, d) = small_instance(ModelKind::Gamma, 5);
    let f = fit(ModelKind::Gamma, &d, &FitOptions::default()).unwrap();
    let se = f.std_errors();
    for j in 0..se.len() {
        assert_relative_eq!(
            se[j],
            (f.gamma_hat[(j, j)] / d.n() as f64).sqrt(),
            max_relative = 1e-14
        );
    }
}

#[test]
fn mle_beats_composite_likelihood_under_correlation() {
    let (mut spec, _) = small_instance(ModelKind::Mvn, 1);
    spec.n = 400;
    spec.correlation = clmult_core::simgen::Correlation::Exchangeable {
        sigma2: 0.8,
        rho: 0.6,
    };
    let d = clmult_core::generate(&spec, 0).unwrap();
    let cl = fit(ModelKind::Mvn, &d, &FitOptions::default()).unwrap();
    let mle = mvn::mvn_mle_fit(&d, &FitOptions::default()).unwrap();
    let eff = mvn::efficiency_ratio(&mle, &cl).unwrap();
    assert!(eff < 1.0 && eff > 0.5, "{eff}");
}

#[test]
fn conditional_cl_equals_enumeration_oracle() {
    for seed in 0..10 {
        let (spec, d) = small_instance(ModelKind::Quadexp, 300 + seed);
        let theta = DVector::from_iterator(
            spec.p + 1,
            spec.beta.iter().copied().chain(std::iter::once(spec.w)),
        );
        let beta = DVector::from_column_slice(&spec.beta);
        let mut oracle = 0.0;
        for c in d.clusters() {
            let table = quadexp_enumeration_oracle(&c.x, &beta, spec.w).unwrap();
            oracle += enumeration_conditional_log_probs(&table, c.y.as_slice())
                .iter()
                .sum::<f64>();
        }
        let direct = quadexp::quadexp_log_cl(&d, &theta, CovariateLevel::Observation);
        assert!(
            (direct - oracle).abs() <= 1e-10,
            "seed {seed}: {direct} vs {oracle}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip_is_value_identical(seed in 0u64..10_000, model_ix in 0usize..4) {
        let model = ModelKind::ALL[model_ix];
        let (_, d) = small_instance(model, seed);
        let mut buf = Vec::new();
        write_clustered(&d, &mut buf).unwrap();
        let back = read_clustered(buf.as_slice(), Some(d.response_kind())).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn sandwich_is_symmetric_positive_semidefinite(seed in 0u64..1000) {
        let (_, d) = small_instance(ModelKind::Mvn, seed);
        let f = fit(ModelKind::Mvn, &d, &FitOptions::default()).unwrap();
        let g = &f.gamma_hat;
        prop_assert!((g - g.transpose()).amax() < 1e-12);
        let eig = g.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() > -1e-10);
    }
}
