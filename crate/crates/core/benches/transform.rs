//! Criterion micro-benchmarks: Cholesky-route transfer against the
//! eigendecomposition baseline, plus the kernels the `parallel`
//! feature accelerates. Run with and without default features to
//! compare the rayon and sequential builds:
//!
//!   cargo bench -p capvst-core
//!   cargo bench -p capvst-core --no-default-features

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use capvst_core::tensor::random_tensor;
use capvst_core::{
    build_laplacian, compute_stats, transfer, wct_svd, RngSeed, Tensor, WeightRng, DEFAULT_EPS,
};

fn features(c: usize, h: usize, w: usize, seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = WeightRng::new(RngSeed(seed));
    random_tensor(c, h, w, &mut rng, lo, hi)
}

fn bench_transfer_routes(c: &mut Criterion) {
    let mut group = c.benchmark_group("transfer_route");
    group.sample_size(10);
    for &channels in &[32usize, 128] {
        let f_c = features(channels, 128, 128, 7, -1.0, 1.0);
        let f_s = features(channels, 128, 128, 8, 0.0, 2.0);
        group.bench_with_input(
            BenchmarkId::new("cholesky", channels),
            &channels,
            |b, _| {
                b.iter(|| transfer(black_box(&f_c), black_box(&f_s), None, None, DEFAULT_EPS))
            },
        );
        group.bench_with_input(BenchmarkId::new("eigen", channels), &channels, |b, _| {
            b.iter(|| wct_svd(black_box(&f_c), black_box(&f_s), DEFAULT_EPS))
        });
    }
    group.finish();
}

fn bench_stats(c: &mut Criterion) {
    let mut group = c.benchmark_group("stats");
    group.sample_size(10);
    for &channels in &[64usize, 256] {
        let f = features(channels, 128, 128, 9, -1.0, 1.0);
        group.bench_with_input(BenchmarkId::from_parameter(channels), &channels, |b, _| {
            b.iter(|| compute_stats(black_box(&f), None, DEFAULT_EPS))
        });
    }
    group.finish();
}

fn bench_matting(c: &mut Criterion) {
    let mut group = c.benchmark_group("matting_laplacian");
    group.sample_size(10);
    for &side in &[32usize, 64] {
        let img = features(3, side, side, 10, 0.0, 1.0);
        group.bench_with_input(BenchmarkId::from_parameter(side), &side, |b, _| {
            b.iter(|| build_laplacian(black_box(&img), 1, 1e-7))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_transfer_routes, bench_stats, bench_matting);
criterion_main!(benches);
