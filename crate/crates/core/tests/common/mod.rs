//! Independent reference implementations shared by the integration tests.
//!
//! Everything here works on plain nested `Vec`s with explicit loops so that
//! it shares no code path with the library under test.

#![allow(dead_code, clippy::needless_range_loop)]

use nck_core::cleaner::{self, CleanerParams};
use nck_core::graphs::{self, Adjacency, FeatureMatrix, RenormalizedAdjacency};
use nck_core::{Activation, Branches, CleanerConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;
pub type LossFn<'a> = dyn Fn(&[f64]) -> (f64, Vec<f64>) + 'a;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_vecs(a: &Array2<f64>) -> Mat {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn from_vecs(m: &Mat) -> Array2<f64> {
    let n = m.len();
    let d = m.first().map_or(0, Vec::len);
    Array2::from_shape_fn((n, d), |(i, j)| m[i][j])
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// `D^-1/2 (A + I) D^-1/2` as an explicit chain of dense products.
pub fn renormalize_dense(a: &Mat) -> Mat {
    let n = a.len();
    let mut tilde = a.clone();
    for i in 0..n {
        tilde[i][i] += 1.0;
    }
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        let deg: f64 = tilde[i].iter().sum();
        d[i][i] = 1.0 / deg.sqrt();
    }
    matmul(&matmul(&d, &tilde), &d)
}

pub fn random_nonnegative(rng: &mut impl Rng, n: usize) -> Mat {
    (0..n)
        .map(|_| {
            (0..n)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0.0
                    } else {
                        rng.random_range(0.0..3.0)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn random_features(rng: &mut impl Rng, n: usize, d: usize, scale: f64) -> FeatureMatrix {
    FeatureMatrix::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-scale..scale))).unwrap()
}

fn act(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn add_row(m: &mut Mat, b: &[f64]) {
    for row in m.iter_mut() {
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn branch_dense(a: &Mat, z: &Mat, layers: &[Array2<f64>], activation: Activation) -> Vec<f64> {
    let mut h = z.clone();
    for (l, w) in layers.iter().enumerate() {
        h = matmul(&matmul(a, &h), &to_vecs(w));
        if l + 1 < layers.len() {
            for row in h.iter_mut() {
                for v in row.iter_mut() {
                    *v = act(activation, *v);
                }
            }
        }
    }
    h.iter().map(|r| r[0]).collect()
}

/// Reference cleaner forward pass.
pub fn cleaner_forward_dense(x: &FeatureMatrix, a_f: &Mat, a_t: &Mat, params: &CleanerParams) -> Vec<f64> {
    let cfg = &params.config;
    let w = &params.weights;
    let mut h1 = matmul(&to_vecs(x.as_array()), &to_vecs(&w.fc1_w));
    add_row(&mut h1, w.fc1_b.as_slice().unwrap());
    for row in h1.iter_mut() {
        for v in row.iter_mut() {
            *v = act(cfg.hidden_activation, *v);
        }
    }
    let mut z = matmul(&h1, &to_vecs(&w.fc2_w));
    add_row(&mut z, w.fc2_b.as_slice().unwrap());
    let mut logits = vec![0.0; x.n_snippets()];
    let mut branches = 0.0;
    if cfg.branches.feature() {
        for (s, v) in logits
            .iter_mut()
            .zip(branch_dense(a_f, &z, &w.feature, cfg.hidden_activation))
        {
            *s += v;
        }
        branches += 1.0;
    }
    if cfg.branches.temporal() {
        for (s, v) in logits
            .iter_mut()
            .zip(branch_dense(a_t, &z, &w.temporal, cfg.hidden_activation))
        {
            *s += v;
        }
        branches += 1.0;
    }
    logits.iter().map(|l| sigmoid(l / branches)).collect()
}

/// A small random cleaner problem with native graphs.
pub struct Instance {
    pub x: FeatureMatrix,
    pub a_f: RenormalizedAdjacency,
    pub a_t: RenormalizedAdjacency,
    pub params: CleanerParams,
}

pub fn small_instance(seed: u64, n: usize, d: usize, branches: Branches, activation: Activation) -> Instance {
    let mut r = rng(seed);
    let x = random_features(&mut r, n, d, 1.0);
    let a_f = graphs::renormalize(&graphs::build_feature_similarity(&x)).unwrap();
    let a_t = graphs::renormalize(&graphs::build_temporal_consistency(n).unwrap()).unwrap();
    let params = cleaner::init_params(&CleanerConfig {
        raw_dim: d,
        comp_dims: [5, 4],
        gcn_hidden: 3,
        gcn_layers_per_branch: 2,
        hidden_activation: activation,
        branches,
        seed: seed ^ 0xA5A5,
        ..CleanerConfig::default()
    })
    .unwrap();
    Instance { x, a_f, a_t, params }
}

pub fn custom(m: &Mat) -> RenormalizedAdjacency {
    graphs::renormalize(&Adjacency::from_matrix(from_vecs(m)).unwrap()).unwrap()
}

/// Largest relative error between the analytic gradient of `loss(p)` and a
/// central difference with step `h`, over every cleaner parameter.
///
/// Relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// entries whose true gradient is zero from dividing round-off by zero.
pub fn max_gradient_error(inst: &Instance, loss: &LossFn, h: f64, floor: f64) -> f64 {
    let trace = cleaner::forward(&inst.x, &inst.a_f, &inst.a_t, &inst.params).unwrap();
    let (_, grad_p) = loss(trace.p.as_slice().unwrap());
    let analytic = cleaner::backward(&trace, &inst.params, &grad_p).unwrap();
    drop(trace);
    let eval = |params: &CleanerParams| {
        let p = cleaner::predict(&inst.x, &inst.a_f, &inst.a_t, params).unwrap();
        loss(&p).0
    };
    let mut worst: f64 = 0.0;
    let n_tensors = inst.params.weights.slices().len();
    for t in 0..n_tensors {
        let len = inst.params.weights.slices()[t].len();
        for k in 0..len {
            let mut plus = inst.params.clone();
            plus.weights.slices_mut()[t][k] += h;
            let mut minus = inst.params.clone();
            minus.weights.slices_mut()[t][k] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.slices()[t][k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
    }
    worst
}

/// Pairwise Mann-Whitney statistic; ties count one half.
pub fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Random scores (with deliberate ties) and labels containing both classes.
pub fn random_scored(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    let n = n.max(2);
    let grid = rng.random_bool(0.5);
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            if grid {
                f64::from(rng.random_range(0..10u8)) / 10.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    labels[0] = 0;
    labels[1] = 1;
    (scores, labels)
}
