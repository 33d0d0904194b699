use clmult_bench::preset_data;
use clmult_core::models::CovariateLevel;
use clmult_core::{fit, FitOptions, ModelKind};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn fitters(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit");
    let cases = [
        (
            ModelKind::Mvn,
            "mvn-rho0.5-m4-p10-null",
            CovariateLevel::Observation,
        ),
        (
            ModelKind::Probit,
            "probit-rho0.5-m4-p10-null",
            CovariateLevel::Observation,
        ),
        (
            ModelKind::Quadexp,
            "quadexp-w0.5-p10-null",
            CovariateLevel::ClusterMean,
        ),
        (
            ModelKind::Gamma,
            "gamma-correlated-null",
            CovariateLevel::Observation,
        ),
    ];
    for (model, name, level) in cases {
        let d = preset_data(name);
        let opts = FitOptions {
            covariate_level: level,
            ..FitOptions::default()
        };
        g.bench_function(model.name(), |b| {
            b.iter(|| fit(model, black_box(&d), &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, fitters);
criterion_main!(benches);
