use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use reasongraph::estimators::{cenconf, pathconv_exact, pathconv_sampled, pathweight, EstimatorParams};
use reasongraph_bench::prepared_question;

const CHAIN_COUNTS: [usize; 3] = [5, 10, 20];

fn katz(c: &mut Criterion) {
    let mut group = c.benchmark_group("cenconf");
    let params = EstimatorParams::default();
    for n in CHAIN_COUNTS {
        let (_, q) = prepared_question(n, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &q, |b, q| {
            b.iter(|| cenconf(black_box(&q.graph), &params).unwrap())
        });
    }
    group.finish();
}

fn paths(c: &mut Criterion) {
    let params = EstimatorParams::default();
    let mut group = c.benchmark_group("pathconv_exact");
    for n in CHAIN_COUNTS {
        let (_, q) = prepared_question(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &q, |b, q| {
            b.iter(|| pathconv_exact(black_box(&q.graph), &params).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("pathweight");
    for n in CHAIN_COUNTS {
        let (_, q) = prepared_question(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &q, |b, q| {
            b.iter(|| pathweight(black_box(&q.merged), &params).unwrap())
        });
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("pathconv_sampled");
    group.sample_size(20);
    let (_, q) = prepared_question(10, 3);
    for walks in [1_000, 10_000, 100_000] {
        let params = EstimatorParams { sample_count: walks, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(walks), &params, |b, params| {
            b.iter(|| pathconv_sampled(black_box(&q.graph), params).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, katz, paths, sampling);
criterion_main!(benches);
