//! Cleaner training objective: cross-entropy on high-confidence snippets plus
//! an L1 temporal-ensembling term against a discounted running average of
//! the cleaner's own predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// Classifier mean prediction and predictive variance per snippet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisySnippetLabels {
    mean: Vec<f64>,
    variance: Vec<f64>,
    n_samples: usize,
}

impl NoisySnippetLabels {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>, n_samples: usize) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::shape("noisy label variance length", mean.len(), variance.len()));
        }
        if n_samples == 0 {
            return Err(Error::validation("noisy labels need at least one sample"));
        }
        if mean.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::validation("noisy label means must lie in [0, 1]"));
        }
        if variance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::validation("noisy label variances must be finite and >= 0"));
        }
        if n_samples == 1 && variance.iter().any(|&v| v != 0.0) {
            return Err(Error::validation("a single sample cannot have non-zero variance"));
        }
        Ok(Self {
            mean,
            variance,
            n_samples,
        })
    }

    /// Deterministic labels: zero variance, one sample.
    pub fn exact(mean: Vec<f64>) -> Result<Self> {
        let variance = vec![0.0; mean.len()];
        Self::new(mean, variance, 1)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Snippets whose predictive variance is smallest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighConfidenceSet {
    indices: Vec<usize>,
    n_total: usize,
}

impl HighConfidenceSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }
}

/// Picks the `max(1, floor(fraction * N))` lowest-variance snippets; ties go
/// to the smaller index. Returned indices are increasing.
pub fn select_high_confidence(labels: &NoisySnippetLabels, fraction: f64) -> Result<HighConfidenceSet> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::validation("cannot select from zero snippets"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::validation(format!(
            "confidence fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let k = ((fraction * n as f64).floor() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let var = labels.variance();
    order.sort_by(|&a, &b| var[a].total_cmp(&var[b]).then(a.cmp(&b)));
    let mut indices = order[..k].to_vec();
    indices.sort_unstable();
    Ok(HighConfidenceSet { indices, n_total: n })
}

/// Binary cross-entropy over the high-confidence set, with its gradient
/// with respect to `p`.
pub fn direct_loss(p: &[f64], labels: &NoisySnippetLabels, h: &HighConfidenceSet) -> Result<(f64, Vec<f64>)> {
    if p.len() != labels.len() {
        return Err(Error::shape("direct loss predictions", labels.len(), p.len()));
    }
    if h.is_empty() {
        return Err(Error::validation("high-confidence set is empty"));
    }
    if let Some(&bad) = h.indices().iter().find(|&&i| i >= p.len()) {
        return Err(Error::validation(format!("high-confidence index {bad} out of range")));
    }
    let inv = 1.0 / h.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.len()];
    for &i in h.indices() {
        let pi = p[i].clamp(EPS, 1.0 - EPS);
        let y = labels.mean()[i];
        loss -= y * pi.ln() + (1.0 - y) * (1.0 - pi).ln();
        grad[i] = inv * (pi - y) / (pi * (1.0 - pi));
    }
    Ok((loss * inv, grad))
}

/// Discounted running average of the cleaner's predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    p_bar: Vec<f64>,
    alpha: f64,
    initialized: bool,
}

impl EmaState {
    pub fn uninitialized(n: usize, alpha: f64) -> Self {
        Self {
            p_bar: vec![0.0; n],
            alpha,
            initialized: false,
        }
    }

    pub fn p_bar(&self) -> &[f64] {
        &self.p_bar
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }
}

/// Warm start from the classifier's mean predictions.
pub fn init_ema(labels: &NoisySnippetLabels, alpha: f64) -> Result<EmaState> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::validation(format!("ema alpha must lie in [0, 1), got {alpha}")));
    }
    Ok(EmaState {
        p_bar: labels.mean().to_vec(),
        alpha,
        initialized: true,
    })
}

/// `p_bar <- alpha * p_bar + (1 - alpha) * p`.
pub fn update_ema(ema: &mut EmaState, p: &[f64]) -> Result<()> {
    if !ema.initialized {
        return Err(Error::validation("ema state is not initialized"));
    }
    if p.len() != ema.p_bar.len() {
        return Err(Error::shape("ema update length", ema.p_bar.len(), p.len()));
    }
    let a = ema.alpha;
    for (bar, &v) in ema.p_bar.iter_mut().zip(p) {
        *bar = a * *bar + (1.0 - a) * v;
    }
    Ok(())
}

/// Mean absolute deviation from the running average, with the sign
/// subgradient (`sign(0) = 0`).
pub fn indirect_loss(p: &[f64], ema: &EmaState) -> Result<(f64, Vec<f64>)> {
    if !ema.initialized {
        return Err(Error::validation("ema state is not initialized"));
    }
    if p.len() != ema.p_bar.len() {
        return Err(Error::shape("indirect loss predictions", ema.p_bar.len(), p.len()));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .iter()
        .zip(&ema.p_bar)
        .map(|(&pi, &bi)| {
            let d = pi - bi;
            loss += d.abs();
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / n, grad))
}

pub fn total_loss(
    p: &[f64],
    labels: &NoisySnippetLabels,
    h: &HighConfidenceSet,
    ema: &EmaState,
) -> Result<(f64, Vec<f64>)> {
    let (ld, gd) = direct_loss(p, labels, h)?;
    let (li, gi) = indirect_loss(p, ema)?;
    let grad = gd.iter().zip(&gi).map(|(a, b)| a + b).collect();
    Ok((ld + li, grad))
}
