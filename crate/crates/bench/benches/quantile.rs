use clmult_bench::equicorrelated;
use clmult_core::mvn::{equicoordinate_quantile, mvn_rectangle_prob};
use clmult_core::QmcConfig;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn rectangle(c: &mut Criterion) {
    let mut g = c.benchmark_group("rectangle_prob");
    for dim in [5, 9, 20] {
        let corr = equicorrelated(dim, 0.5);
        let b = vec![2.5; dim];
        let a = vec![-2.5; dim];
        g.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |bench, _| {
            bench.iter(|| {
                mvn_rectangle_prob(&a, &b, black_box(&corr), &QmcConfig::simulation()).unwrap()
            })
        });
    }
    g.finish();
}

fn quantile(c: &mut Criterion) {
    let mut g = c.benchmark_group("equicoordinate_quantile");
    g.sample_size(20);
    for dim in [5, 9, 20] {
        let corr = equicorrelated(dim, 0.5);
        for (label, cfg) in [
            ("simulation", QmcConfig::simulation()),
            ("default", QmcConfig::default()),
        ] {
            g.bench_with_input(BenchmarkId::new(label, dim), &dim, |bench, _| {
                bench.iter(|| equicoordinate_quantile(black_box(&corr), 0.05, &cfg).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, rectangle, quantile);
criterion_main!(benches);
