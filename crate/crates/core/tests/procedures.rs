mod common;

use clmult_core::harness::{preset, run_experiment};
use clmult_core::inference::{adjust, correlation_matrix_v, test_statistics};
use clmult_core::mvn::{equicoordinate_quantile, std_normal_quantile};
use clmult_core::{build_contrasts, ContrastKind, Procedure, QmcConfig};
use common::random_correlation;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg() -> QmcConfig {
    QmcConfig::simulation()
}

#[test]
fn identity_correlation_gives_sidak_cutoff() {
    for c in [5usize, 10, 20] {
        let q =
            equicoordinate_quantile(&DMatrix::identity(c, c), 0.05, &QmcConfig::default()).unwrap();
        let sidak = std_normal_quantile(1.0 - (1.0 - 0.95f64.powf(1.0 / c as f64)) / 2.0).unwrap();
        assert!((q - sidak).abs() < 1e-3, "c={c}: {q} vs {sidak}");
    }
}

#[test]
fn mvn_cutoff_below_bonferroni_for_random_correlations() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let cf = build_contrasts(ContrastKind::ManyToOne { baseline: 0 }, 7).unwrap();
    for _ in 0..10 {
        let v = random_correlation(6, &mut rng);
        let t = DVector::zeros(6);
        let mnq = adjust(Procedure::Mnq, &t, &v, 0.05, &cf, &cfg())
            .unwrap()
            .cutoff
            .unwrap();
        let bonf = adjust(Procedure::Bonferroni, &t, &v, 0.05, &cf, &cfg())
            .unwrap()
            .cutoff
            .unwrap();
        let sidak = adjust(Procedure::Sidak, &t, &v, 0.05, &cf, &cfg())
            .unwrap()
            .cutoff
            .unwrap();
        assert!(mnq <= sidak + 1e-3 && sidak < bonf, "{mnq} {sidak} {bonf}");
    }
}

#[test]
fn experiments_do_not_depend_on_worker_count() {
    let mut base = preset("mvn-rho0.5-m4-p10-null").unwrap();
    base.replicates = 6;
    base.scenario.n = 60;
    let mut one = base.clone();
    one.workers = 1;
    let mut two = base;
    two.workers = 2;
    assert_eq!(run_experiment(&one).unwrap(), run_experiment(&two).unwrap());
}

#[test]
fn holm_and_bonferroni_agree_on_the_global_null_in_a_run() {
    let mut cfg = preset("probit-rho0.5-m4-p10-a2").unwrap();
    cfg.replicates = 20;
    cfg.scenario.n = 200;
    let s = run_experiment(&cfg).unwrap();
    assert_eq!(s.ordering.checked, s.completed as u64);
    assert_eq!(s.ordering.holm_not_superset, 0);
    assert_eq!(s.ordering.holm_global_mismatch, 0);
    let (holm, bonf) = (
        s.procedure(Procedure::Holm).unwrap(),
        s.procedure(Procedure::Bonferroni).unwrap(),
    );
    assert_eq!(holm.global.count, bonf.global.count);
    assert!(holm.ind_power_sum >= bonf.ind_power_sum);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn holm_rejections_contain_bonferroni(ts in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        let c = ts.len();
        let cf = build_contrasts(ContrastKind::ManyToOne { baseline: 0 }, c + 1).unwrap();
        let t = DVector::from_vec(ts);
        let v = DMatrix::identity(c, c);
        let holm = adjust(Procedure::Holm, &t, &v, 0.05, &cf, &cfg()).unwrap();
        let bonf = adjust(Procedure::Bonferroni, &t, &v, 0.05, &cf, &cfg()).unwrap();
        let sidak = adjust(Procedure::Sidak, &t, &v, 0.05, &cf, &cfg()).unwrap();
        for i in 0..c {
            prop_assert!(!bonf.reject[i] || holm.reject[i]);
            prop_assert!(!bonf.reject[i] || sidak.reject[i]);
        }
        prop_assert_eq!(holm.global_reject, bonf.global_reject);
        let (hp, bp) = (holm.adjusted_p.unwrap(), bonf.adjusted_p.unwrap());
        for i in 0..c {
            prop_assert!(hp[i] <= bp[i] + 1e-15);
            prop_assert_eq!(bp[i] <= 0.05, bonf.reject[i] || (bp[i] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn statistics_follow_contrast_sign_and_v_is_a_correlation(
        theta in prop::collection::vec(-1.0f64..1.0, 4),
        seed in 0u64..1000,
        scale in 0.1f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_correlation(4, &mut rng) * 2.0;
        let theta = DVector::from_vec(theta);
        let cf = build_contrasts(ContrastKind::AllPairwise, 4).unwrap();
        let t = test_statistics(&theta, &g, &cf, 50).unwrap();
        let scaled = clmult_core::ContrastFamily::custom(cf.matrix() * -scale, cf.labels().to_vec()).unwrap();
        let t2 = test_statistics(&theta, &g, &scaled, 50).unwrap();
        for i in 0..t.len() {
            prop_assert!((t[i] + t2[i]).abs() < 1e-9 * t[i].abs().max(1.0));
        }
        let v = correlation_matrix_v(&g, &cf).unwrap();
        for i in 0..v.nrows() {
            prop_assert_eq!(v[(i, i)], 1.0);
            for j in 0..v.ncols() {
                prop_assert!(v[(i, j)].abs() <= 1.0);
                prop_assert_eq!(v[(i, j)], v[(j, i)]);
            }
        }
    }
}
