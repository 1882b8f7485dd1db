//! Seeded synthetic videos with one-sided label noise.
//!
//! Each snippet feature is
//!
//! ```text
//! x = c_v + y_i * delta + noise,      noise ~ N(0, feature_noise_sigma^2 I)
//! c_v = Y * context_shift * u + N(0, context_sigma^2 I)   (one per video)
//! ```
//!
//! where `delta` has norm `class_separation` and `u` is a unit direction
//! orthogonal to it. The per-video context term models scene statistics
//! shared by every snippet of a video; with `context_shift > 0`, anomalous
//! videos differ from normal ones even in their normal snippets, which is
//! what makes video-level labels misleading at snippet level.
//!
//! Anomalous snippets form contiguous runs placed uniformly at random.
//! Features are rounded to `f32` precision so exported files round-trip
//! exactly.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::FeatureMatrix;
use crate::rng::rng_for;

/// One video: observable label, snippet features, and (for evaluation only)
/// per-snippet ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoBag {
    pub id: String,
    pub label: u8,
    pub features: FeatureMatrix,
    pub ground_truth: Option<Vec<u8>>,
}

impl VideoBag {
    pub fn n_snippets(&self) -> usize {
        self.features.n_snippets()
    }

    pub fn is_anomalous(&self) -> bool {
        self.label == 1
    }

    /// Checks the one-sided noise semantics against the ground truth, when
    /// present.
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::validation(format!("video {}: label must be 0 or 1", self.id)));
        }
        if let Some(gt) = &self.ground_truth {
            if gt.len() != self.n_snippets() {
                return Err(Error::shape("ground truth length", self.n_snippets(), gt.len()));
            }
            if gt.iter().any(|&g| g > 1) {
                return Err(Error::validation(format!(
                    "video {}: ground truth must be 0/1",
                    self.id
                )));
            }
            if self.label == 0 && gt.contains(&1) {
                return Err(Error::validation(format!(
                    "video {}: normal video contains anomalous snippets",
                    self.id
                )));
            }
            if self.label == 1 && !gt.contains(&1) {
                return Err(Error::validation(format!(
                    "video {}: anomalous video has no anomalous snippet",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_videos: usize,
    pub anomaly_video_fraction: f64,
    /// Inclusive range of snippets per video.
    pub snippets_per_video: (usize, usize),
    /// Fraction of an anomalous video covered by anomalous snippets.
    pub anomaly_segment_fraction: f64,
    /// Maximum number of separate anomalous runs per anomalous video.
    pub max_segments: usize,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub feature_noise_sigma: f64,
    pub context_shift: f64,
    pub context_sigma: f64,
    /// Prefix for generated video ids.
    pub id_prefix: String,
    /// Seeds the class and context directions. Datasets meant to share a
    /// distribution (a train and an eval split) share this value.
    pub direction_seed: u64,
    /// Seeds everything else: labels, lengths, segments, noise.
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_videos: 20,
            anomaly_video_fraction: 0.4,
            snippets_per_video: (32, 64),
            anomaly_segment_fraction: 0.3,
            max_segments: 1,
            feature_dim: 16,
            class_separation: 2.0,
            feature_noise_sigma: 1.0,
            context_shift: 0.0,
            context_sigma: 0.0,
            id_prefix: "video".to_string(),
            direction_seed: 0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snippets_per_video;
        if self.n_videos == 0 || self.feature_dim == 0 || lo == 0 || lo > hi {
            return Err(Error::validation(format!(
                "synthetic config needs videos, features and a valid snippet range: {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.anomaly_video_fraction) {
            return Err(Error::validation("anomaly_video_fraction must lie in [0, 1]"));
        }
        if !(self.anomaly_segment_fraction > 0.0 && self.anomaly_segment_fraction <= 1.0) {
            return Err(Error::validation("anomaly_segment_fraction must lie in (0, 1]"));
        }
        if self.anomalous_count(lo) == 0 {
            return Err(Error::validation(format!(
                "anomaly_segment_fraction {} yields no anomalous snippet for a {lo}-snippet video",
                self.anomaly_segment_fraction
            )));
        }
        if self.max_segments == 0 {
            return Err(Error::validation("max_segments must be at least 1"));
        }
        let scales = [
            self.class_separation,
            self.feature_noise_sigma,
            self.context_shift,
            self.context_sigma,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::validation("separation and noise scales must be finite and >= 0"));
        }
        Ok(())
    }

    fn anomalous_count(&self, n: usize) -> usize {
        (self.anomaly_segment_fraction * n as f64).floor() as usize
    }

    fn n_anomalous_videos(&self) -> usize {
        (self.anomaly_video_fraction * self.n_videos as f64).round() as usize
    }
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Splits `total` anomalous snippets into at most `max_runs` runs and
/// places them without overlap (runs are separated by at least one normal
/// snippet when there is room).
fn place_runs(rng: &mut impl Rng, n: usize, total: usize, max_runs: usize) -> Vec<u8> {
    let mut gt = vec![0u8; n];
    let normal = n - total;
    let runs = rng.random_range(1..=max_runs.min(total).min(normal + 1).max(1));
    // run lengths: random composition of `total` into `runs` positive parts
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, total.saturating_sub(1).max(1), runs - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut lengths = Vec::with_capacity(runs);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(total)) {
        lengths.push(c - prev);
        prev = c;
    }
    // gaps: runs + 1 slots of normal snippets, inner gaps at least one
    let inner = runs - 1;
    let free = normal - inner;
    let mut gaps = vec![0usize; runs + 1];
    for _ in 0..free {
        gaps[rng.random_range(0..=runs)] += 1;
    }
    for g in gaps.iter_mut().take(runs).skip(1) {
        *g += 1;
    }
    let mut pos = 0;
    for (r, len) in lengths.iter().enumerate() {
        pos += gaps[r];
        for g in gt.iter_mut().skip(pos).take(*len) {
            *g = 1;
        }
        pos += len;
    }
    gt
}

pub fn generate(config: &SyntheticConfig) -> Result<Vec<VideoBag>> {
    config.validate()?;
    let d = config.feature_dim;
    let mut dir_rng = rng_for(config.direction_seed, &[0]);
    let delta = random_unit(&mut dir_rng, d) * config.class_separation;
    let context_dir = {
        let u = random_unit(&mut dir_rng, d);
        if d > 1 && config.class_separation > 0.0 {
            let dn = &delta / config.class_separation;
            let proj = &u - &(&dn * u.dot(&dn));
            let norm = proj.dot(&proj).sqrt();
            if norm > 1e-12 {
                proj / norm
            } else {
                u
            }
        } else {
            u
        }
    };

    // which videos are anomalous: a seeded subset of exact size
    let n_anom = config.n_anomalous_videos();
    let mut label_rng = rng_for(config.seed, &[1]);
    let mut labels = vec![0u8; config.n_videos];
    for i in rand::seq::index::sample(&mut label_rng, config.n_videos, n_anom) {
        labels[i] = 1;
    }

    let (lo, hi) = config.snippets_per_video;
    let width = config.n_videos.to_string().len().max(3);
    labels
        .iter()
        .enumerate()
        .map(|(v, &label)| {
            let mut rng = rng_for(config.seed, &[2, v as u64]);
            let n = rng.random_range(lo..=hi);
            let gt = if label == 1 {
                place_runs(&mut rng, n, config.anomalous_count(n), config.max_segments)
            } else {
                vec![0u8; n]
            };
            let mut context = &context_dir * (f64::from(label) * config.context_shift);
            for c in context.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *c += config.context_sigma * z;
            }
            let data = Array2::from_shape_fn((n, d), |(i, j)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let value = context[j] + f64::from(gt[i]) * delta[j] + config.feature_noise_sigma * z;
                value as f32 as f64
            });
            let bag = VideoBag {
                id: format!("{}-{:0width$}", config.id_prefix, v),
                label,
                features: FeatureMatrix::new(data)?,
                ground_truth: Some(gt),
            };
            bag.validate()?;
            Ok(bag)
        })
        .collect()
}

/// Fixed train/eval split used by the acceptance experiments.
#[derive(Debug, Clone)]
pub struct StandardBenchmark {
    pub train: Vec<VideoBag>,
    pub eval: Vec<VideoBag>,
    pub expected: ExpectedBehavior,
}

/// What the benchmark is calibrated to show.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedBehavior {
    /// Eval AUC range of the classifier trained on video-level labels.
    pub step1_auc: (f64, f64),
    /// Minimum mean AUC gain from the first cleaning step.
    pub min_step2_gain: f64,
}

pub const STANDARD_TRAIN_SEED: u64 = 20_190_611;
pub const STANDARD_EVAL_SEED: u64 = 20_190_612;

pub fn standard_train_config() -> SyntheticConfig {
    SyntheticConfig {
        n_videos: 60,
        anomaly_video_fraction: 0.7,
        snippets_per_video: (64, 128),
        anomaly_segment_fraction: 0.3,
        max_segments: 1,
        feature_dim: 32,
        class_separation: 3.0,
        feature_noise_sigma: 1.0,
        context_shift: 4.0,
        context_sigma: 0.5,
        id_prefix: "train".to_string(),
        direction_seed: STANDARD_TRAIN_SEED,
        seed: STANDARD_TRAIN_SEED,
    }
}

pub fn standard_eval_config() -> SyntheticConfig {
    SyntheticConfig {
        n_videos: 40,
        id_prefix: "eval".to_string(),
        seed: STANDARD_EVAL_SEED,
        ..standard_train_config()
    }
}

pub fn standard_benchmark() -> StandardBenchmark {
    let train = generate(&standard_train_config()).expect("standard train config is valid");
    let eval = generate(&standard_eval_config()).expect("standard eval config is valid");
    StandardBenchmark {
        train,
        eval,
        expected: ExpectedBehavior {
            step1_auc: (0.70, 0.85),
            min_step2_gain: 0.03,
        },
    }
}
