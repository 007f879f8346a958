use acdc_core::sim::{
    generate_outbreak, run_acdc_tracing, run_app_tracing, run_experiment, SimConfig,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn outbreak(c: &mut Criterion) {
    let cfg = SimConfig::default();
    c.bench_function("generate_outbreak", |b| {
        b.iter(|| generate_outbreak(&cfg, 11))
    });
}

fn tracing(c: &mut Criterion) {
    let cfg = SimConfig::default();
    let tree = generate_outbreak(&cfg, 11);
    let mut group = c.benchmark_group("trace");
    group.bench_function("acdc", |b| b.iter(|| run_acdc_tracing(&tree, &cfg, 11)));
    group.bench_function("app", |b| b.iter(|| run_app_tracing(&tree, &cfg, 11)));
    group.finish();
}

fn experiment(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment");
    group.sample_size(10);
    for n in [10u32, 100] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| run_experiment(&SimConfig::default(), n).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, outbreak, tracing, experiment);
criterion_main!(benches);
