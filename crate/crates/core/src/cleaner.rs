//! The label-noise cleaner network.
//!
//! Snippet features pass through two fully connected compression layers,
//! then through one stack of graph layers per enabled branch (feature
//! similarity and temporal consistency). Each branch ends in a scalar logit
//! per snippet; the branch logits are averaged and squashed with a sigmoid.
//!
//! ```text
//! Z      = FC2(act(FC1(X)))
//! H_l    = act(Â H_{l-1} W_l)      hidden graph layers, H_0 = Z
//! logit  = Â H_{L-1} W_L           final graph layer, width 1, no activation
//! p      = sigmoid(mean over branches of logit)
//! ```
//!
//! Graph layers carry no bias. Gradients are derived by hand; `backward`
//! is verified against central finite differences in the tests.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{FeatureMatrix, RenormalizedAdjacency};
use crate::instrument;
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the activation.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

/// Which graph branches the cleaner uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    #[default]
    Both,
    FeatureOnly,
    TemporalOnly,
}

impl Branches {
    pub fn feature(self) -> bool {
        matches!(self, Branches::Both | Branches::FeatureOnly)
    }

    pub fn temporal(self) -> bool {
        matches!(self, Branches::Both | Branches::TemporalOnly)
    }

    pub fn count(self) -> usize {
        usize::from(self.feature()) + usize::from(self.temporal())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanerConfig {
    pub raw_dim: usize,
    pub comp_dims: [usize; 2],
    pub gcn_hidden: usize,
    /// Graph layers per branch, including the final scalar layer.
    pub gcn_layers_per_branch: usize,
    pub hidden_activation: Activation,
    pub branches: Branches,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for CleanerConfig {
    fn default() -> Self {
        Self {
            raw_dim: 1024,
            comp_dims: [512, 128],
            gcn_hidden: 32,
            gcn_layers_per_branch: 2,
            hidden_activation: Activation::Relu,
            branches: Branches::Both,
            optimizer: OptimizerKind::default(),
            seed: 0,
        }
    }
}

impl CleanerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.raw_dim == 0 || self.comp_dims.contains(&0) || self.gcn_hidden == 0 || self.gcn_layers_per_branch == 0 {
            return Err(Error::validation(format!(
                "cleaner widths and layer count must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// (in, out) widths of each graph layer in one branch.
    pub fn branch_layer_dims(&self) -> Vec<(usize, usize)> {
        let layers = self.gcn_layers_per_branch;
        (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { self.comp_dims[1] } else { self.gcn_hidden };
                let fan_out = if l + 1 == layers { 1 } else { self.gcn_hidden };
                (fan_in, fan_out)
            })
            .collect()
    }
}

/// Every trainable tensor of the cleaner. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanerWeights {
    pub fc1_w: Array2<f64>,
    pub fc1_b: Array1<f64>,
    pub fc2_w: Array2<f64>,
    pub fc2_b: Array1<f64>,
    /// Empty when the feature branch is disabled.
    pub feature: Vec<Array2<f64>>,
    /// Empty when the temporal branch is disabled.
    pub temporal: Vec<Array2<f64>>,
}

pub type ParamGradients = CleanerWeights;

impl CleanerWeights {
    pub fn zeros(config: &CleanerConfig) -> Self {
        let [c1, c2] = config.comp_dims;
        let branch = |enabled: bool| -> Vec<Array2<f64>> {
            if enabled {
                config
                    .branch_layer_dims()
                    .into_iter()
                    .map(|(i, o)| Array2::zeros((i, o)))
                    .collect()
            } else {
                Vec::new()
            }
        };
        Self {
            fc1_w: Array2::zeros((config.raw_dim, c1)),
            fc1_b: Array1::zeros(c1),
            fc2_w: Array2::zeros((c1, c2)),
            fc2_b: Array1::zeros(c2),
            feature: branch(config.branches.feature()),
            temporal: branch(config.branches.temporal()),
        }
    }

    /// Tensor names and shapes in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            ("fc1.weight".to_string(), self.fc1_w.shape().to_vec()),
            ("fc1.bias".to_string(), self.fc1_b.shape().to_vec()),
            ("fc2.weight".to_string(), self.fc2_w.shape().to_vec()),
            ("fc2.bias".to_string(), self.fc2_b.shape().to_vec()),
        ];
        for (prefix, layers) in [("feature", &self.feature), ("temporal", &self.temporal)] {
            for (l, w) in layers.iter().enumerate() {
                out.push((format!("{prefix}.gcn{l}.weight"), w.shape().to_vec()));
            }
        }
        out
    }

    /// Flat views of every tensor, in [`layout`](Self::layout) order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.fc1_w.as_slice().expect("standard layout"),
            self.fc1_b.as_slice().expect("standard layout"),
            self.fc2_w.as_slice().expect("standard layout"),
            self.fc2_b.as_slice().expect("standard layout"),
        ];
        for w in self.feature.iter().chain(&self.temporal) {
            out.push(w.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.fc1_w.as_slice_mut().expect("standard layout"),
            self.fc1_b.as_slice_mut().expect("standard layout"),
            self.fc2_w.as_slice_mut().expect("standard layout"),
            self.fc2_b.as_slice_mut().expect("standard layout"),
        ];
        for w in self.feature.iter_mut().chain(self.temporal.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Cleaner weights together with their configuration and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanerParams {
    pub config: CleanerConfig,
    pub weights: CleanerWeights,
    pub optimizer: Optimizer,
}

/// Scaled-uniform (Glorot) initialization with zero biases.
///
/// Each tensor draws from its own seeded stream, so enabling or disabling a
/// branch leaves the other tensors unchanged.
pub fn init_params(config: &CleanerConfig) -> Result<CleanerParams> {
    config.validate()?;
    let mut weights = CleanerWeights::zeros(config);
    let glorot = |w: &mut Array2<f64>, stream: u64| {
        let (fan_in, fan_out) = w.dim();
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = rng_for(config.seed, &[stream]);
        w.mapv_inplace(|_| rng.random_range(-bound..bound));
    };
    glorot(&mut weights.fc1_w, 0);
    glorot(&mut weights.fc2_w, 1);
    for (l, w) in weights.feature.iter_mut().enumerate() {
        glorot(w, 100 + l as u64);
    }
    for (l, w) in weights.temporal.iter_mut().enumerate() {
        glorot(w, 200 + l as u64);
    }
    Ok(CleanerParams {
        config: config.clone(),
        weights,
        optimizer: Optimizer::new(config.optimizer),
    })
}

/// Cached activations of one graph branch.
#[derive(Debug, Clone)]
pub struct BranchTrace {
    /// `Â H_{l-1}` for each layer.
    pub aggregated: Vec<Array2<f64>>,
    /// `Â H_{l-1} W_l` for each layer.
    pub pre: Vec<Array2<f64>>,
    /// Activated outputs of the hidden layers (one fewer than `pre`).
    pub hidden: Vec<Array2<f64>>,
    pub logit: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<'a> {
    pub x: &'a FeatureMatrix,
    pub a_f: &'a RenormalizedAdjacency,
    pub a_t: &'a RenormalizedAdjacency,
    pub fc1_pre: Array2<f64>,
    pub fc1_out: Array2<f64>,
    pub compressed: Array2<f64>,
    pub feature: Option<BranchTrace>,
    pub temporal: Option<BranchTrace>,
    pub fused_logit: Array1<f64>,
    pub p: Array1<f64>,
}

/// One graph layer: `act(Â H W)`, or the plain product when `act` is `None`.
pub fn graph_layer(
    a: &RenormalizedAdjacency,
    h: &Array2<f64>,
    w: &Array2<f64>,
    act: Option<Activation>,
) -> Array2<f64> {
    let mut out = a.as_array().dot(h).dot(w);
    if let Some(act) = act {
        out.mapv_inplace(|v| act.apply(v));
    }
    out
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn add_bias(m: &mut Array2<f64>, b: &Array1<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        row += b;
    }
}

fn run_branch(a: &RenormalizedAdjacency, z: &Array2<f64>, layers: &[Array2<f64>], act: Activation) -> BranchTrace {
    let mut aggregated = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut hidden = Vec::with_capacity(layers.len().saturating_sub(1));
    for (l, w) in layers.iter().enumerate() {
        let input = if l == 0 { z } else { &hidden[l - 1] };
        let agg = a.as_array().dot(input);
        let p = agg.dot(w);
        if l + 1 < layers.len() {
            hidden.push(p.mapv(|v| act.apply(v)));
        }
        aggregated.push(agg);
        pre.push(p);
    }
    let logit = pre.last().expect("at least one layer").column(0).to_owned();
    BranchTrace {
        aggregated,
        pre,
        hidden,
        logit,
    }
}

pub fn forward<'a>(
    x: &'a FeatureMatrix,
    a_f: &'a RenormalizedAdjacency,
    a_t: &'a RenormalizedAdjacency,
    params: &CleanerParams,
) -> Result<ForwardTrace<'a>> {
    let cfg = &params.config;
    let n = x.n_snippets();
    if x.dim() != cfg.raw_dim {
        return Err(Error::shape("cleaner input width", cfg.raw_dim, x.dim()));
    }
    if a_f.len() != n {
        return Err(Error::shape("feature adjacency size", n, a_f.len()));
    }
    if a_t.len() != n {
        return Err(Error::shape("temporal adjacency size", n, a_t.len()));
    }
    instrument::record_cleaner_forward();

    let w = &params.weights;
    let act = cfg.hidden_activation;
    let mut fc1_pre = x.as_array().dot(&w.fc1_w);
    add_bias(&mut fc1_pre, &w.fc1_b);
    let fc1_out = fc1_pre.mapv(|v| act.apply(v));
    let mut compressed = fc1_out.dot(&w.fc2_w);
    add_bias(&mut compressed, &w.fc2_b);

    let feature = cfg
        .branches
        .feature()
        .then(|| run_branch(a_f, &compressed, &w.feature, act));
    let temporal = cfg
        .branches
        .temporal()
        .then(|| run_branch(a_t, &compressed, &w.temporal, act));

    let mut fused_logit = Array1::zeros(n);
    for b in feature.iter().chain(temporal.iter()) {
        fused_logit += &b.logit;
    }
    fused_logit /= cfg.branches.count() as f64;
    let p = fused_logit.mapv(sigmoid);

    Ok(ForwardTrace {
        x,
        a_f,
        a_t,
        fc1_pre,
        fc1_out,
        compressed,
        feature,
        temporal,
        fused_logit,
        p,
    })
}

fn branch_backward(
    a: &RenormalizedAdjacency,
    trace: &BranchTrace,
    layers: &[Array2<f64>],
    grad_logit: &Array1<f64>,
    act: Activation,
    grads: &mut [Array2<f64>],
) -> Array2<f64> {
    let n = grad_logit.len();
    let mut g_pre = grad_logit.clone().into_shape_with_order((n, 1)).expect("column");
    for l in (0..layers.len()).rev() {
        if l + 1 < layers.len() {
            let pre = &trace.pre[l];
            let out = &trace.hidden[l];
            ndarray::Zip::from(&mut g_pre)
                .and(pre)
                .and(out)
                .for_each(|g, &p, &o| *g *= act.derivative(p, o));
        }
        grads[l].assign(&trace.aggregated[l].t().dot(&g_pre));
        let g_agg = g_pre.dot(&layers[l].t());
        g_pre = a.as_array().t().dot(&g_agg);
    }
    g_pre
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient with respect to the output probabilities.
pub fn backward(trace: &ForwardTrace<'_>, params: &CleanerParams, grad_p: &[f64]) -> Result<ParamGradients> {
    let cfg = &params.config;
    let w = &params.weights;
    let n = trace.x.n_snippets();
    if grad_p.len() != n || trace.p.len() != n {
        return Err(Error::shape("upstream gradient length", n, grad_p.len()));
    }
    if grad_p.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("upstream gradient is not finite"));
    }
    let stale = trace.fc1_pre.ncols() != w.fc1_w.ncols()
        || trace.compressed.ncols() != w.fc2_w.ncols()
        || trace.feature.as_ref().map(|b| b.pre.len()) != (!w.feature.is_empty()).then_some(w.feature.len())
        || trace.temporal.as_ref().map(|b| b.pre.len()) != (!w.temporal.is_empty()).then_some(w.temporal.len());
    if stale {
        return Err(Error::validation("forward trace does not match parameter shapes"));
    }

    let act = cfg.hidden_activation;
    let mut grads = CleanerWeights::zeros(cfg);
    let scale = 1.0 / cfg.branches.count() as f64;
    let grad_logit: Array1<f64> = grad_p
        .iter()
        .zip(trace.p.iter())
        .map(|(g, p)| g * p * (1.0 - p) * scale)
        .collect();

    let mut g_z = Array2::<f64>::zeros(trace.compressed.raw_dim());
    if let Some(bt) = &trace.feature {
        g_z += &branch_backward(trace.a_f, bt, &w.feature, &grad_logit, act, &mut grads.feature);
    }
    if let Some(bt) = &trace.temporal {
        g_z += &branch_backward(trace.a_t, bt, &w.temporal, &grad_logit, act, &mut grads.temporal);
    }

    grads.fc2_w.assign(&trace.fc1_out.t().dot(&g_z));
    grads.fc2_b = g_z.sum_axis(Axis(0));
    let mut g_fc1 = g_z.dot(&w.fc2_w.t());
    ndarray::Zip::from(&mut g_fc1)
        .and(&trace.fc1_pre)
        .and(&trace.fc1_out)
        .for_each(|g, &p, &o| *g *= act.derivative(p, o));
    grads.fc1_w.assign(&trace.x.as_array().t().dot(&g_fc1));
    grads.fc1_b = g_fc1.sum_axis(Axis(0));
    Ok(grads)
}

/// One optimizer step in place.
pub fn apply_update(params: &mut CleanerParams, grads: &ParamGradients, lr: f64) -> Result<()> {
    let grad_slices = grads.slices();
    let mut param_slices = params.weights.slices_mut();
    if grad_slices.len() != param_slices.len() {
        return Err(Error::shape(
            "gradient tensor count",
            param_slices.len(),
            grad_slices.len(),
        ));
    }
    params.optimizer.apply(&mut param_slices, &grad_slices, lr)
}

/// Output probabilities only.
pub fn predict(
    x: &FeatureMatrix,
    a_f: &RenormalizedAdjacency,
    a_t: &RenormalizedAdjacency,
    params: &CleanerParams,
) -> Result<Vec<f64>> {
    Ok(forward(x, a_f, a_t, params)?.p.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{build_feature_similarity, build_temporal_consistency, renormalize};
    use rand::Rng;

    fn small_config(raw: usize, branches: Branches) -> CleanerConfig {
        CleanerConfig {
            raw_dim: raw,
            comp_dims: [6, 5],
            gcn_hidden: 4,
            gcn_layers_per_branch: 2,
            branches,
            seed: 11,
            ..CleanerConfig::default()
        }
    }

    fn instance(n: usize, d: usize, seed: u64) -> (FeatureMatrix, RenormalizedAdjacency, RenormalizedAdjacency) {
        let mut rng = rng_for(seed, &[]);
        let x = FeatureMatrix::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))).unwrap();
        let af = renormalize(&build_feature_similarity(&x)).unwrap();
        let at = renormalize(&build_temporal_consistency(n).unwrap()).unwrap();
        (x, af, at)
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = small_config(8, Branches::Both);
        let a = init_params(&cfg).unwrap();
        let b = init_params(&cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        let c = init_params(&CleanerConfig {
            seed: 12,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(a.weights, c.weights);
        assert!(a.weights.fc1_b.iter().chain(a.weights.fc2_b.iter()).all(|&v| v == 0.0));
        let bound = (6.0f64 / (8 + 6) as f64).sqrt();
        assert!(a.weights.fc1_w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn branch_streams_are_independent_of_branch_selection() {
        let both = init_params(&small_config(8, Branches::Both)).unwrap();
        let t_only = init_params(&small_config(8, Branches::TemporalOnly)).unwrap();
        assert_eq!(both.weights.temporal, t_only.weights.temporal);
        assert_eq!(both.weights.fc1_w, t_only.weights.fc1_w);
        assert!(t_only.weights.feature.is_empty());
    }

    #[test]
    fn zero_weights_give_one_half() {
        let cfg = small_config(4, Branches::Both);
        let mut params = init_params(&cfg).unwrap();
        params.weights = CleanerWeights::zeros(&cfg);
        let (x, af, at) = instance(5, 4, 3);
        let p = predict(&x, &af, &at, &params).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_rejects_mismatched_shapes() {
        let params = init_params(&small_config(4, Branches::Both)).unwrap();
        let (x, af, _) = instance(5, 4, 3);
        let wrong = RenormalizedAdjacency::identity(4);
        assert!(forward(&x, &af, &wrong, &params).is_err());
        let (x3, _, _) = instance(5, 3, 3);
        assert!(forward(&x3, &af, &af, &params).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let params = init_params(&small_config(4, Branches::Both)).unwrap();
        let (x, af, at) = instance(6, 4, 5);
        let trace = forward(&x, &af, &at, &params).unwrap();
        let g = backward(&trace, &params, &[0.0; 6]).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        let params = init_params(&small_config(4, Branches::Both)).unwrap();
        let (x, af, at) = instance(6, 4, 5);
        let trace = forward(&x, &af, &at, &params).unwrap();
        let gp: Vec<f64> = (0..6).map(|i| (i as f64) * 0.3 - 0.7).collect();
        let g1 = backward(&trace, &params, &gp).unwrap();
        let g2 = backward(&trace, &params, &gp.iter().map(|v| 2.0 * v).collect::<Vec<_>>()).unwrap();
        for (a, b) in g1.slices().iter().zip(g2.slices()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((2.0 * u - v).abs() <= 1e-14 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn backward_rejects_stale_trace() {
        let params = init_params(&small_config(4, Branches::Both)).unwrap();
        let other = init_params(&CleanerConfig {
            gcn_layers_per_branch: 3,
            ..small_config(4, Branches::Both)
        })
        .unwrap();
        let (x, af, at) = instance(6, 4, 5);
        let trace = forward(&x, &af, &at, &params).unwrap();
        assert!(backward(&trace, &other, &[0.1; 6]).is_err());
        assert!(backward(&trace, &params, &[0.1; 5]).is_err());
    }

    #[test]
    fn apply_update_with_zero_grads_is_noop() {
        let cfg = small_config(4, Branches::Both);
        let mut params = init_params(&cfg).unwrap();
        let before = params.weights.clone();
        apply_update(&mut params, &CleanerWeights::zeros(&cfg), 1e-3).unwrap();
        assert_eq!(before, params.weights);
        assert_eq!(params.optimizer.steps(), 1);
    }

    #[test]
    fn apply_update_is_deterministic() {
        let cfg = small_config(4, Branches::Both);
        let (x, af, at) = instance(6, 4, 5);
        let mut a = init_params(&cfg).unwrap();
        let mut b = a.clone();
        for params in [&mut a, &mut b] {
            let trace = forward(&x, &af, &at, params).unwrap();
            let g = backward(&trace, params, &[0.2; 6]).unwrap();
            apply_update(params, &g, 1e-2).unwrap();
        }
        assert_eq!(a, b);
    }
}
