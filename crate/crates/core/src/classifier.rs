//! Snippet classifiers.
//!
//! [`SnippetClassifier`] is the contract the alternation loop needs from an
//! action classifier. [`BuiltinClassifier`] is a small logistic / one hidden
//! layer network over snippet features, trained with binary cross-entropy
//! against soft targets.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cleaner::sigmoid;
use crate::error::{Error, Result};
use crate::graphs::FeatureMatrix;
use crate::loss::{NoisySnippetLabels, EPS};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{rng_for, stream};

/// Pre-activation and activation of the hidden layer.
type HiddenCache = (Array2<f64>, Array2<f64>);

/// Features of one video paired with a training target per snippet.
#[derive(Debug, Clone, Copy)]
pub struct TrainingVideo<'a> {
    pub features: &'a FeatureMatrix,
    pub targets: &'a [f64],
}

pub trait SnippetClassifier {
    /// Continues training from the current state for `epochs` passes.
    fn train(&mut self, data: &[TrainingVideo<'_>], epochs: usize) -> Result<()>;

    /// Anomaly score per snippet, in `[0, 1]`.
    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>>;

    /// Mean and unbiased variance of `predict` over `m` copies of `x`, each
    /// perturbed with independent `N(0, jitter^2)` noise.
    fn predict_sampled(&self, x: &FeatureMatrix, m: usize, jitter: f64, seed: u64) -> Result<NoisySnippetLabels> {
        if m == 0 {
            return Err(Error::validation("predict_sampled needs m >= 1"));
        }
        if !(jitter.is_finite() && jitter >= 0.0) {
            return Err(Error::validation(format!(
                "jitter must be finite and >= 0, got {jitter}"
            )));
        }
        let n = x.n_snippets();
        let mut mean = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        let mut rng = rng_for(seed, &[stream::SAMPLING]);
        for k in 1..=m {
            let scores = if jitter == 0.0 {
                self.predict(x)?
            } else {
                let noisy = x.as_array().mapv(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + jitter * z
                });
                self.predict(&FeatureMatrix::new(noisy)?)?
            };
            // Welford: identical samples leave mean exact and m2 at zero.
            for i in 0..n {
                let delta = scores[i] - mean[i];
                mean[i] += delta / k as f64;
                m2[i] += delta * (scores[i] - mean[i]);
            }
        }
        let variance = if m == 1 {
            vec![0.0; n]
        } else {
            m2.iter().map(|v| (v / (m - 1) as f64).max(0.0)).collect()
        };
        let mean = mean.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        NoisySnippetLabels::new(mean, variance, m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuiltinClassifierConfig {
    /// Hidden layer width; 0 means plain logistic regression.
    pub hidden_width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Feature-noise scale used when sampling predictions.
    pub jitter_sigma: f64,
    /// Threshold targets at 0.5 before training.
    pub hard_targets: bool,
    pub seed: u64,
}

impl Default for BuiltinClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_width: 0,
            epochs: 30,
            lr: 1e-2,
            batch_size: 256,
            jitter_sigma: 0.1,
            hard_targets: false,
            seed: 0,
        }
    }
}

impl BuiltinClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("classifier epochs must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("classifier lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("classifier batch size must be >= 1"));
        }
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(Error::validation("jitter_sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinWeights {
    /// `d x h`, or `d x 1` for the logistic model.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `h x 1`; empty for the logistic model.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl BuiltinWeights {
    fn slices(&self) -> Vec<&[f64]> {
        [&self.w1, &self.w2]
            .into_iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .chain(
                [&self.b1, &self.b2]
                    .into_iter()
                    .map(|b| b.as_slice().expect("standard layout")),
            )
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    fn zeros_like(&self) -> Self {
        Self {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.len()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.len()),
        }
    }

    pub fn named(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        vec![
            (
                "w1",
                self.w1.shape().to_vec(),
                self.w1.as_slice().expect("standard layout"),
            ),
            (
                "b1",
                self.b1.shape().to_vec(),
                self.b1.as_slice().expect("standard layout"),
            ),
            (
                "w2",
                self.w2.shape().to_vec(),
                self.w2.as_slice().expect("standard layout"),
            ),
            (
                "b2",
                self.b2.shape().to_vec(),
                self.b2.as_slice().expect("standard layout"),
            ),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinClassifier {
    config: BuiltinClassifierConfig,
    input_dim: usize,
    weights: BuiltinWeights,
    train_calls: u64,
}

impl BuiltinClassifier {
    pub fn new(input_dim: usize, config: BuiltinClassifierConfig) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::validation("classifier input dimension must be >= 1"));
        }
        let h = config.hidden_width;
        let mut rng = rng_for(config.seed, &[stream::CLASSIFIER_INIT]);
        let mut glorot = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
        };
        let weights = if h == 0 {
            BuiltinWeights {
                w1: glorot(input_dim, 1),
                b1: Array1::zeros(1),
                w2: Array2::zeros((0, 1)),
                b2: Array1::zeros(0),
            }
        } else {
            BuiltinWeights {
                w1: glorot(input_dim, h),
                b1: Array1::zeros(h),
                w2: glorot(h, 1),
                b2: Array1::zeros(1),
            }
        };
        Ok(Self {
            config,
            input_dim,
            weights,
            train_calls: 0,
        })
    }

    /// Rebuilds a classifier from stored weights.
    pub fn from_weights(config: BuiltinClassifierConfig, weights: BuiltinWeights) -> Result<Self> {
        config.validate()?;
        let input_dim = weights.w1.nrows();
        let h = config.hidden_width;
        let ok = if h == 0 {
            weights.w1.ncols() == 1 && weights.b1.len() == 1 && weights.w2.is_empty() && weights.b2.is_empty()
        } else {
            weights.w1.ncols() == h && weights.b1.len() == h && weights.w2.dim() == (h, 1) && weights.b2.len() == 1
        };
        if !ok || input_dim == 0 {
            return Err(Error::validation("classifier weights do not match configuration"));
        }
        Ok(Self {
            config,
            input_dim,
            weights,
            train_calls: 0,
        })
    }

    pub fn config(&self) -> &BuiltinClassifierConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weights(&self) -> &BuiltinWeights {
        &self.weights
    }

    fn logits(&self, x: &Array2<f64>) -> (Option<HiddenCache>, Array1<f64>) {
        let w = &self.weights;
        let mut first = x.dot(&w.w1);
        for mut row in first.axis_iter_mut(Axis(0)) {
            row += &w.b1;
        }
        if self.config.hidden_width == 0 {
            (None, first.column(0).to_owned())
        } else {
            let hidden = first.mapv(|v| v.max(0.0));
            let logit = hidden.dot(&w.w2).column(0).mapv(|v| v + w.b2[0]);
            (Some((first, hidden)), logit)
        }
    }

    fn gradients(&self, x: &Array2<f64>, targets: &[f64]) -> BuiltinWeights {
        let (cache, logit) = self.logits(x);
        let b = targets.len() as f64;
        let g_logit: Array1<f64> = logit.iter().zip(targets).map(|(&z, &t)| (sigmoid(z) - t) / b).collect();
        let mut grads = self.weights.zeros_like();
        let g_col = g_logit.view().insert_axis(Axis(1));
        match cache {
            None => {
                grads.w1.assign(&x.t().dot(&g_col));
                grads.b1[0] = g_logit.sum();
            }
            Some((pre, hidden)) => {
                grads.w2.assign(&hidden.t().dot(&g_col));
                grads.b2[0] = g_logit.sum();
                let mut g_hidden = g_col.dot(&self.weights.w2.t());
                ndarray::Zip::from(&mut g_hidden).and(&pre).for_each(|g, &p| {
                    if p <= 0.0 {
                        *g = 0.0
                    }
                });
                grads.w1.assign(&x.t().dot(&g_hidden));
                grads.b1 = g_hidden.sum_axis(Axis(0));
            }
        }
        grads
    }

    /// Mean binary cross-entropy of the current model on `data`.
    pub fn mean_bce(&self, data: &[TrainingVideo<'_>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for v in data {
            let p = self.predict(v.features)?;
            for (&pi, &t) in p.iter().zip(v.targets) {
                let pi = pi.clamp(EPS, 1.0 - EPS);
                total -= t * pi.ln() + (1.0 - t) * (1.0 - pi).ln();
            }
            count += p.len();
        }
        Ok(total / count.max(1) as f64)
    }
}

impl SnippetClassifier for BuiltinClassifier {
    fn train(&mut self, data: &[TrainingVideo<'_>], epochs: usize) -> Result<()> {
        if data.is_empty() {
            return Err(Error::validation("cannot train on an empty dataset"));
        }
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for v in data {
            if v.features.dim() != self.input_dim {
                return Err(Error::shape("classifier input width", self.input_dim, v.features.dim()));
            }
            if v.targets.len() != v.features.n_snippets() {
                return Err(Error::shape("target count", v.features.n_snippets(), v.targets.len()));
            }
            if let Some(t) = v.targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(Error::validation(format!("target {t} outside [0, 1]")));
            }
            rows.extend(v.features.as_array().iter().copied());
            targets.extend(v.targets.iter().map(|&t| {
                if self.config.hard_targets {
                    if t >= 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    t
                }
            }));
        }
        let call = self.train_calls;
        self.train_calls += 1;
        if epochs == 0 {
            return Ok(());
        }
        let n = targets.len();
        let x = Array2::from_shape_vec((n, self.input_dim), rows).map_err(|e| Error::validation(e.to_string()))?;
        let mut rng = rng_for(self.config.seed, &[stream::CLASSIFIER_SHUFFLE, call]);
        let mut optimizer = Optimizer::new(OptimizerKind::default());
        let mut order: Vec<usize> = (0..n).collect();
        let bs = self.config.batch_size.min(n);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(bs) {
                let xb = x.select(Axis(0), chunk);
                let tb: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
                let grads = self.gradients(&xb, &tb);
                let g = grads.slices();
                optimizer.apply(&mut self.weights.slices_mut(), &g, self.config.lr)?;
            }
        }
        Ok(())
    }

    fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.dim() != self.input_dim {
            return Err(Error::shape("classifier input width", self.input_dim, x.dim()));
        }
        let (_, logit) = self.logits(x.as_array());
        Ok(logit.iter().map(|&z| sigmoid(z)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, d: usize, sep: f64, seed: u64) -> (FeatureMatrix, Vec<f64>) {
        let mut rng = rng_for(seed, &[]);
        let mut targets = Vec::with_capacity(n);
        let data = Array2::from_shape_fn((n, d), |(i, j)| {
            let label = (i % 2) as f64;
            let z: f64 = StandardNormal.sample(&mut rng);
            if j == 0 {
                label * sep + z * 0.5
            } else {
                z
            }
        });
        for i in 0..n {
            targets.push((i % 2) as f64);
        }
        (FeatureMatrix::new(data).unwrap(), targets)
    }

    #[test]
    fn train_on_separable_data() {
        let (x, t) = blobs(400, 4, 4.0, 1);
        for hidden in [0, 8] {
            let cfg = BuiltinClassifierConfig {
                hidden_width: hidden,
                seed: 3,
                ..Default::default()
            };
            let mut c = BuiltinClassifier::new(4, cfg.clone()).unwrap();
            c.train(
                &[TrainingVideo {
                    features: &x,
                    targets: &t,
                }],
                cfg.epochs,
            )
            .unwrap();
            let p = c.predict(&x).unwrap();
            let correct = p.iter().zip(&t).filter(|(p, t)| (**p >= 0.5) == (**t == 1.0)).count();
            assert!(correct as f64 / t.len() as f64 >= 0.95, "hidden={hidden}: {correct}");
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn uniform_half_targets() {
        let (x, _) = blobs(300, 4, 2.0, 2);
        let t = vec![0.5; 300];
        let cfg = BuiltinClassifierConfig {
            hidden_width: 8,
            seed: 4,
            ..Default::default()
        };
        let mut c = BuiltinClassifier::new(4, cfg.clone()).unwrap();
        c.train(
            &[TrainingVideo {
                features: &x,
                targets: &t,
            }],
            cfg.epochs,
        )
        .unwrap();
        let p = c.predict(&x).unwrap();
        let dev = p.iter().map(|v| (v - 0.5).abs()).sum::<f64>() / p.len() as f64;
        assert!(dev < 0.1, "mean |p - 0.5| = {dev}");
    }

    #[test]
    fn training_is_deterministic() {
        let (x, t) = blobs(200, 3, 2.0, 5);
        let cfg = BuiltinClassifierConfig {
            hidden_width: 4,
            seed: 9,
            ..Default::default()
        };
        let run = || {
            let mut c = BuiltinClassifier::new(3, cfg.clone()).unwrap();
            c.train(
                &[TrainingVideo {
                    features: &x,
                    targets: &t,
                }],
                5,
            )
            .unwrap();
            c
        };
        assert_eq!(run().weights(), run().weights());
    }

    #[test]
    fn zero_epochs_is_noop_and_empty_dataset_fails() {
        let (x, t) = blobs(20, 3, 2.0, 5);
        let mut c = BuiltinClassifier::new(3, BuiltinClassifierConfig::default()).unwrap();
        let before = c.weights().clone();
        c.train(
            &[TrainingVideo {
                features: &x,
                targets: &t,
            }],
            0,
        )
        .unwrap();
        assert_eq!(&before, c.weights());
        assert!(c.train(&[], 1).is_err());
        let bad = vec![1.5; 20];
        assert!(c
            .train(
                &[TrainingVideo {
                    features: &x,
                    targets: &bad
                }],
                1
            )
            .is_err());
    }

    #[test]
    fn sampling_contracts() {
        let (x, t) = blobs(50, 3, 2.0, 6);
        let mut c = BuiltinClassifier::new(
            3,
            BuiltinClassifierConfig {
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        c.train(
            &[TrainingVideo {
                features: &x,
                targets: &t,
            }],
            5,
        )
        .unwrap();
        let exact = c.predict(&x).unwrap();

        let one = c.predict_sampled(&x, 1, 0.5, 7).unwrap();
        assert!(one.variance().iter().all(|&v| v == 0.0));

        let still = c.predict_sampled(&x, 10, 0.0, 7).unwrap();
        assert!(still.variance().iter().all(|&v| v == 0.0));
        assert_eq!(still.mean(), &exact[..]);

        assert!(c.predict_sampled(&x, 0, 0.1, 7).is_err());
        assert_eq!(
            c.predict_sampled(&x, 5, 0.2, 3).unwrap(),
            c.predict_sampled(&x, 5, 0.2, 3).unwrap()
        );
    }

    #[test]
    fn weights_roundtrip_through_constructor() {
        let c = BuiltinClassifier::new(
            3,
            BuiltinClassifierConfig {
                hidden_width: 4,
                ..Default::default()
            },
        )
        .unwrap();
        let back = BuiltinClassifier::from_weights(c.config().clone(), c.weights().clone()).unwrap();
        assert_eq!(back.weights(), c.weights());
        assert!(BuiltinClassifier::from_weights(BuiltinClassifierConfig::default(), c.weights().clone()).is_err());
    }
}
