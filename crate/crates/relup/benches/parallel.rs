//! Rayon kernels versus their sequential fallbacks, at the shapes the
//! training loop actually produces, plus fold-level parallelism end to end.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use relup::data::{generate_synthetic, stratified_folds};
use relup::tensor::{gemm_nn_par, gemm_nn_seq, gemm_nt_par, gemm_nt_seq};
use relup::train::{run_folds, ModelConfig};

fn pseudo_random(len: usize, seed: u64) -> Vec<f64> {
    let mut state = seed;
    (0..len)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

fn bench_gemm(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm_nn");
    group.sample_size(20).measurement_time(Duration::from_secs(3));
    // (batch nodes) x hidden x hidden, as in one message-passing layer
    for &m in &[256usize, 2048] {
        let (k, n) = (128usize, 128usize);
        let a = pseudo_random(m * k, 1);
        let b = pseudo_random(k * n, 2);
        group.bench_with_input(BenchmarkId::new("seq", m), &m, |bench, _| {
            bench.iter(|| black_box(gemm_nn_seq(&a, &b, m, k, n)))
        });
        group.bench_with_input(BenchmarkId::new("par", m), &m, |bench, _| {
            bench.iter(|| black_box(gemm_nn_par(&a, &b, m, k, n)))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("gemm_nt_attention_scores");
    group.sample_size(20).measurement_time(Duration::from_secs(3));
    // batch-level attention: B x d_head times B x d_head transposed
    let (b_rows, d) = (128usize, 32usize);
    let q = pseudo_random(b_rows * d, 3);
    let k = pseudo_random(b_rows * d, 4);
    group.bench_function("seq", |bench| {
        bench.iter(|| black_box(gemm_nt_seq(&q, &k, b_rows, d, b_rows)))
    });
    group.bench_function("par", |bench| {
        bench.iter(|| black_box(gemm_nt_par(&q, &k, b_rows, d, b_rows)))
    });
    group.finish();
}

fn bench_folds(c: &mut Criterion) {
    let dataset = generate_synthetic(40, 7).unwrap();
    let plans = stratified_folds(&dataset, 10, 7).unwrap();
    let config = ModelConfig {
        hidden: 16,
        layers: 2,
        heads: 2,
        batch_size: 16,
        max_epochs: 2,
        patience: 2,
        seed: 7,
        ..ModelConfig::default()
    };
    let mut group = c.benchmark_group("cross_validation_folds");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    group.bench_function("sequential", |bench| {
        bench.iter(|| black_box(run_folds(&dataset, &plans[..4], &config, 1).unwrap()))
    });
    group.bench_function("parallel_x2", |bench| {
        bench.iter(|| black_box(run_folds(&dataset, &plans[..4], &config, 2).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_gemm, bench_folds);
criterion_main!(benches);
