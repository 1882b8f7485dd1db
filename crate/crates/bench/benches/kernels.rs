use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nck_core::graphs::{self, FeatureMatrix};
use nck_core::{cleaner, eval, CleanerConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap()
}

fn graph_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("graphs");
    for n in [32, 128, 512] {
        let x = features(&mut rng, n, 32);
        let a = graphs::build_feature_similarity(&x);
        group.bench_with_input(BenchmarkId::new("feature_similarity", n), &x, |b, x| {
            b.iter(|| graphs::build_feature_similarity(black_box(x)))
        });
        group.bench_with_input(BenchmarkId::new("renormalize", n), &a, |b, a| {
            b.iter(|| graphs::renormalize(black_box(a)).unwrap())
        });
    }
    group.finish();
}

fn cleaner_pass(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("cleaner");
    for n in [64, 256] {
        let x = features(&mut rng, n, 32);
        let a_f = graphs::renormalize(&graphs::build_feature_similarity(&x)).unwrap();
        let a_t = graphs::renormalize(&graphs::build_temporal_consistency(n).unwrap()).unwrap();
        let params = cleaner::init_params(&CleanerConfig {
            raw_dim: 32,
            comp_dims: [32, 16],
            gcn_hidden: 16,
            ..CleanerConfig::default()
        })
        .unwrap();
        let grad_p = vec![1.0 / n as f64; n];
        group.bench_function(BenchmarkId::new("forward_backward", n), |b| {
            b.iter(|| {
                let trace = cleaner::forward(&x, &a_f, &a_t, &params).unwrap();
                cleaner::backward(&trace, &params, black_box(&grad_p)).unwrap()
            })
        });
    }
    group.finish();
}

fn auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 7 == 0)).collect();
    c.bench_function("auc_10k", |b| {
        b.iter(|| eval::auc(black_box(&scores), &labels).unwrap())
    });
}

criterion_group!(benches, graph_kernels, cleaner_pass, auc);
criterion_main!(benches);
