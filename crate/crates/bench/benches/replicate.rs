use clmult_core::harness::preset;
use clmult_core::run_experiment;
use criterion::{criterion_group, criterion_main, Criterion};

// One full simulation replicate: generate, fit, MLE comparison and all procedures.
fn replicate(c: &mut Criterion) {
    let mut g = c.benchmark_group("replicate");
    g.sample_size(10);
    for name in ["mvn-rho0.5-m4-p10-null", "quadexp-w0.5-p10-null"] {
        let mut cfg = preset(name).unwrap();
        cfg.replicates = 1;
        cfg.workers = 1;
        g.bench_function(name, |b| b.iter(|| run_experiment(&cfg).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, replicate);
criterion_main!(benches);
