use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ckprof_bench::{all_active, large_tree, small_tree};
use ckprof_core::optimizer::{self, Strategy};
use ckprof_core::{binomial, profiler, sim, CheckpointConfig};

fn bench_simulate(c: &mut Criterion) {
    let tree = large_tree();
    let config = all_active();
    c.bench_function("simulate/85-checkpoint tree", |b| {
        b.iter(|| sim::simulate(black_box(&tree), black_box(&config)).unwrap())
    });
}

fn bench_profile(c: &mut Criterion) {
    let tree = large_tree();
    let config = all_active();
    let (events, cost) = sim::capture_events(&tree, &config).unwrap();
    c.bench_function("profile/85-checkpoint stream", |b| {
        b.iter(|| profiler::profile(black_box(&events), cost.time_s).unwrap())
    });
}

fn bench_optimize(c: &mut Criterion) {
    let tree = small_tree();
    c.bench_function("optimize/time-first full trajectory", |b| {
        b.iter(|| {
            optimizer::optimize(
                black_box(&tree),
                &CheckpointConfig::default(),
                &Strategy::time_first(),
            )
            .unwrap()
        })
    });
}

fn bench_pareto(c: &mut Criterion) {
    let tree = small_tree();
    c.bench_function("pareto/2^10 enumeration", |b| {
        b.iter(|| optimizer::pareto(black_box(&tree), &CheckpointConfig::default(), 10).unwrap())
    });
}

fn bench_binomial(c: &mut Criterion) {
    c.bench_function("binomial/schedule l=500 d=8", |b| {
        b.iter(|| binomial::schedule(black_box(500), black_box(8)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_simulate,
    bench_profile,
    bench_optimize,
    bench_pareto,
    bench_binomial
);
criterion_main!(benches);
