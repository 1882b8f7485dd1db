//! Alternate optimization of the snippet classifier and the label cleaner.
//!
//! Step 1 trains the classifier on video-level labels (every snippet of an
//! anomalous video gets target 1). Each later step samples the classifier's
//! predictions on the anomalous training videos, trains a cleaner on them,
//! and retrains the classifier on the cleaned labels. Normal videos keep
//! all-zero targets throughout. Evaluation only ever calls the classifier.

use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{BuiltinClassifier, BuiltinClassifierConfig, SnippetClassifier, TrainingVideo};
use crate::cleaner::{self, Branches, CleanerConfig, CleanerParams};
use crate::error::{Error, Result};
use crate::eval::{self, RocCurve};
use crate::graphs::{self, FeatureMatrix, RenormalizedAdjacency};
use crate::loss::{self, EmaState, HighConfidenceSet, NoisySnippetLabels};
use crate::rng::{derive_seed, rng_for, stream};
use crate::synthdata::VideoBag;

/// Where a branch's adjacency comes from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    #[default]
    Native,
    /// Every edge set to this value.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphOverrides {
    pub feature: GraphSource,
    pub temporal: GraphSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanerSharing {
    /// One parameter set trained over all anomalous videos of a step.
    #[default]
    Shared,
    /// An independent cleaner per anomalous video.
    PerVideo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlternationConfig {
    pub n_steps: usize,
    /// `raw_dim` is overwritten with the dataset's feature width.
    pub cleaner: CleanerConfig,
    pub cleaner_epochs: usize,
    pub cleaner_lr: f64,
    pub confidence_fraction: f64,
    pub ema_alpha: f64,
    /// Include the temporal-ensembling term in the cleaner loss.
    pub use_indirect: bool,
    pub symmetrize_similarity: bool,
    pub graphs: GraphOverrides,
    pub sharing: CleanerSharing,
    /// Carry cleaner parameters over from the previous step.
    pub warm_start_cleaner: bool,
    /// Stochastic classifier evaluations per snippet.
    pub n_samples: usize,
    pub classifier: BuiltinClassifierConfig,
    pub retrain_epochs: usize,
    pub eval_threshold: f64,
    /// Drives classifier, cleaner and sampling randomness.
    pub seed: u64,
}

impl Default for AlternationConfig {
    fn default() -> Self {
        Self {
            n_steps: 3,
            cleaner: CleanerConfig::default(),
            cleaner_epochs: 60,
            cleaner_lr: 1e-3,
            confidence_fraction: 0.5,
            ema_alpha: 0.6,
            use_indirect: true,
            symmetrize_similarity: false,
            graphs: GraphOverrides::default(),
            sharing: CleanerSharing::Shared,
            warm_start_cleaner: false,
            n_samples: 10,
            classifier: BuiltinClassifierConfig::default(),
            retrain_epochs: 30,
            eval_threshold: 0.5,
            seed: 0,
        }
    }
}

impl AlternationConfig {
    /// Settings sized for the standard synthetic benchmark.
    pub fn benchmark() -> Self {
        Self {
            cleaner: CleanerConfig {
                comp_dims: [32, 16],
                gcn_hidden: 16,
                ..CleanerConfig::default()
            },
            classifier: BuiltinClassifierConfig {
                hidden_width: 16,
                ..BuiltinClassifierConfig::default()
            },
            retrain_epochs: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::validation("n_steps must be >= 1"));
        }
        if !(self.confidence_fraction > 0.0 && self.confidence_fraction <= 1.0) {
            return Err(Error::validation("confidence_fraction must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::validation("ema_alpha must lie in [0, 1)"));
        }
        if !(self.cleaner_lr > 0.0 && self.cleaner_lr.is_finite()) {
            return Err(Error::validation("cleaner_lr must be positive"));
        }
        if self.n_samples == 0 {
            return Err(Error::validation("n_samples must be >= 1"));
        }
        for source in [self.graphs.feature, self.graphs.temporal] {
            if let GraphSource::Constant(v) = source {
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::validation(format!("constant graph value {v} outside (0, 1]")));
                }
            }
        }
        self.classifier.validate()
    }
}

/// Cleaned soft labels keyed by video id.
pub type CleanedLabels = BTreeMap<String, Vec<f64>>;

/// Everything the cleaner needs for one anomalous video.
struct CleanerSample<'a> {
    id: &'a str,
    x: &'a FeatureMatrix,
    a_f: RenormalizedAdjacency,
    a_t: RenormalizedAdjacency,
    labels: NoisySnippetLabels,
    high_conf: HighConfidenceSet,
    ema: EmaState,
}

fn branch_graph(
    x: &FeatureMatrix,
    source: GraphSource,
    feature_branch: bool,
    symmetrize: bool,
) -> Result<RenormalizedAdjacency> {
    let n = x.n_snippets();
    let adjacency = match source {
        GraphSource::Constant(v) => graphs::build_constant(n, v)?,
        GraphSource::Native if feature_branch => {
            let a = graphs::build_feature_similarity(x);
            if symmetrize {
                a.symmetrized()
            } else {
                a
            }
        }
        GraphSource::Native => graphs::build_temporal_consistency(n)?,
    };
    graphs::renormalize(&adjacency)
}

/// Builds the graphs, confidence set and warm-started EMA for one video.
fn prepare_sample<'a, C: SnippetClassifier + ?Sized>(
    classifier: &C,
    bag: &'a VideoBag,
    config: &AlternationConfig,
    sampling_seed: u64,
) -> Result<CleanerSample<'a>> {
    let n = bag.n_snippets();
    if n == 0 {
        return Err(Error::validation(format!("video {} has no snippets", bag.id)));
    }
    let x = &bag.features;
    let labels = classifier.predict_sampled(x, config.n_samples, config.classifier.jitter_sigma, sampling_seed)?;
    let branches = config.cleaner.branches;
    let a_f = if branches.feature() {
        branch_graph(x, config.graphs.feature, true, config.symmetrize_similarity)?
    } else {
        RenormalizedAdjacency::identity(n)
    };
    let a_t = if branches.temporal() {
        branch_graph(x, config.graphs.temporal, false, false)?
    } else {
        RenormalizedAdjacency::identity(n)
    };
    let high_conf = loss::select_high_confidence(&labels, config.confidence_fraction)?;
    let ema = loss::init_ema(&labels, config.ema_alpha)?;
    Ok(CleanerSample {
        id: &bag.id,
        x,
        a_f,
        a_t,
        labels,
        high_conf,
        ema,
    })
}

/// One gradient step on one video; returns the loss before the update.
fn cleaner_step(sample: &mut CleanerSample<'_>, params: &mut CleanerParams, config: &AlternationConfig) -> Result<f64> {
    let trace = cleaner::forward(sample.x, &sample.a_f, &sample.a_t, params)?;
    let p = trace.p.as_slice().expect("contiguous");
    let (value, grad) = if config.use_indirect {
        loss::total_loss(p, &sample.labels, &sample.high_conf, &sample.ema)?
    } else {
        loss::direct_loss(p, &sample.labels, &sample.high_conf)?
    };
    let grads = cleaner::backward(&trace, params, &grad)?;
    let p = trace.p.to_vec();
    drop(trace);
    cleaner::apply_update(params, &grads, config.cleaner_lr)?;
    loss::update_ema(&mut sample.ema, &p)?;
    Ok(value)
}

fn cleaner_config_for(config: &AlternationConfig, raw_dim: usize, seed: u64) -> CleanerConfig {
    CleanerConfig {
        raw_dim,
        seed,
        ..config.cleaner.clone()
    }
}

/// Output of one cleaning stage.
#[derive(Debug, Clone)]
pub struct CleanStageOutput {
    pub labels: CleanedLabels,
    /// Classifier mean predictions the cleaner started from.
    pub noisy_means: CleanedLabels,
    /// Shared-mode cleaner after training.
    pub cleaner: Option<CleanerParams>,
    /// Mean training loss over the last epoch.
    pub final_loss: f64,
}

/// Cleans the labels of every anomalous video in `dataset`.
///
/// `step` selects the random streams; `warm` provides starting parameters
/// in shared mode.
pub fn clean_stage<C: SnippetClassifier + Sync + ?Sized>(
    classifier: &C,
    dataset: &[VideoBag],
    config: &AlternationConfig,
    step: u64,
    warm: Option<&CleanerParams>,
) -> Result<CleanStageOutput> {
    config.validate()?;
    let anomalous: Vec<(usize, &VideoBag)> = dataset.iter().enumerate().filter(|(_, b)| b.is_anomalous()).collect();
    if anomalous.is_empty() {
        return Ok(CleanStageOutput {
            labels: CleanedLabels::new(),
            noisy_means: CleanedLabels::new(),
            cleaner: None,
            final_loss: 0.0,
        });
    }
    let raw_dim = anomalous[0].1.features.dim();
    if let Some((_, b)) = anomalous.iter().find(|(_, b)| b.features.dim() != raw_dim) {
        return Err(Error::shape("video feature width", raw_dim, b.features.dim()));
    }
    let sampling_seed = |video: usize| derive_seed(config.seed, &[stream::SAMPLING, step, video as u64]);

    match config.sharing {
        CleanerSharing::Shared => {
            let mut samples = anomalous
                .iter()
                .map(|&(v, bag)| prepare_sample(classifier, bag, config, sampling_seed(v)))
                .collect::<Result<Vec<_>>>()?;
            let mut params = match warm {
                Some(p) if p.config.raw_dim == raw_dim && p.config.branches == config.cleaner.branches => p.clone(),
                _ => cleaner::init_params(&cleaner_config_for(
                    config,
                    raw_dim,
                    derive_seed(config.seed, &[stream::CLEANER_INIT, step]),
                ))?,
            };
            let mut order_rng = rng_for(config.seed, &[stream::CLEANER_ORDER, step]);
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut final_loss = 0.0;
            for epoch in 0..config.cleaner_epochs {
                order.shuffle(&mut order_rng);
                let mut total = 0.0;
                for &s in &order {
                    total += cleaner_step(&mut samples[s], &mut params, config)?;
                }
                final_loss = total / samples.len() as f64;
                if epoch % 20 == 0 {
                    debug!("step {step} cleaner epoch {epoch}: loss {final_loss:.5}");
                }
            }
            let mut labels = CleanedLabels::new();
            let mut noisy_means = CleanedLabels::new();
            for s in &samples {
                labels.insert(s.id.to_string(), cleaner::predict(s.x, &s.a_f, &s.a_t, &params)?);
                noisy_means.insert(s.id.to_string(), s.labels.mean().to_vec());
            }
            Ok(CleanStageOutput {
                labels,
                noisy_means,
                cleaner: Some(params),
                final_loss,
            })
        }
        CleanerSharing::PerVideo => {
            let results = anomalous
                .par_iter()
                .map(|&(v, bag)| -> Result<(String, Vec<f64>, Vec<f64>, f64)> {
                    let mut sample = prepare_sample(classifier, bag, config, sampling_seed(v))?;
                    let mut params = cleaner::init_params(&cleaner_config_for(
                        config,
                        raw_dim,
                        derive_seed(config.seed, &[stream::CLEANER_INIT, step, v as u64]),
                    ))?;
                    let mut last = 0.0;
                    for _ in 0..config.cleaner_epochs {
                        last = cleaner_step(&mut sample, &mut params, config)?;
                    }
                    let p = cleaner::predict(sample.x, &sample.a_f, &sample.a_t, &params)?;
                    Ok((bag.id.clone(), p, sample.labels.mean().to_vec(), last))
                })
                .collect::<Result<Vec<_>>>()?;
            let final_loss = results.iter().map(|r| r.3).sum::<f64>() / results.len() as f64;
            let mut labels = CleanedLabels::new();
            let mut noisy_means = CleanedLabels::new();
            for (id, p, m, _) in results {
                labels.insert(id.clone(), p);
                noisy_means.insert(id, m);
            }
            Ok(CleanStageOutput {
                labels,
                noisy_means,
                cleaner: None,
                final_loss,
            })
        }
    }
}

/// Per-video training targets: zeros for normal videos, `anomalous(bag)`
/// for anomalous ones.
fn targets_for(
    dataset: &[VideoBag],
    mut anomalous: impl FnMut(&VideoBag) -> Result<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    dataset
        .iter()
        .map(|bag| {
            if bag.is_anomalous() {
                let t = anomalous(bag)?;
                if t.len() != bag.n_snippets() {
                    return Err(Error::shape("cleaned label count", bag.n_snippets(), t.len()));
                }
                Ok(t)
            } else {
                Ok(vec![0.0; bag.n_snippets()])
            }
        })
        .collect()
}

fn train_on<C: SnippetClassifier + ?Sized>(
    classifier: &mut C,
    dataset: &[VideoBag],
    targets: &[Vec<f64>],
    epochs: usize,
) -> Result<()> {
    let data: Vec<TrainingVideo<'_>> = dataset
        .iter()
        .zip(targets)
        .map(|(bag, t)| TrainingVideo {
            features: &bag.features,
            targets: t,
        })
        .collect();
    classifier.train(&data, epochs)
}

/// Video-level targets used before any cleaning.
pub fn video_level_targets(dataset: &[VideoBag]) -> Vec<Vec<f64>> {
    targets_for(dataset, |bag| Ok(vec![1.0; bag.n_snippets()])).expect("lengths match by construction")
}

/// Retrains the classifier from its current state on cleaned labels.
/// Returns the per-video targets that were used.
pub fn classify_stage<C: SnippetClassifier + ?Sized>(
    classifier: &mut C,
    dataset: &[VideoBag],
    cleaned: &CleanedLabels,
    epochs: usize,
) -> Result<Vec<Vec<f64>>> {
    let targets = targets_for(dataset, |bag| {
        cleaned
            .get(&bag.id)
            .cloned()
            .ok_or_else(|| Error::validation(format!("no cleaned labels for anomalous video {}", bag.id)))
    })?;
    train_on(classifier, dataset, &targets, epochs)?;
    Ok(targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub auc: f64,
    pub false_alarm_rate: f64,
    pub roc: RocCurve,
}

/// Test-time path: classifier scores only, no graphs, no cleaner.
pub fn evaluate<C: SnippetClassifier + ?Sized>(
    classifier: &C,
    eval_set: &[VideoBag],
    threshold: f64,
) -> Result<Evaluation> {
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for bag in eval_set {
        let gt = bag
            .ground_truth
            .as_ref()
            .ok_or_else(|| Error::validation(format!("eval video {} has no ground truth", bag.id)))?;
        scores.extend(classifier.predict(&bag.features)?);
        truth.extend_from_slice(gt);
    }
    let roc = eval::roc_curve(&scores, &truth)?;
    Ok(Evaluation {
        auc: roc.area(),
        false_alarm_rate: eval::false_alarm_rate(&scores, &truth, threshold)?,
        roc,
    })
}

#[derive(Debug, Clone)]
pub struct StepRecord<C = BuiltinClassifier> {
    /// 1-based step index.
    pub step: usize,
    pub evaluation: Evaluation,
    /// Training targets of every video at this step, keyed by id.
    pub targets: BTreeMap<String, Vec<f64>>,
    /// Cleaned labels of the anomalous videos (empty at step 1).
    pub cleaned: CleanedLabels,
    pub cleaner: Option<CleanerParams>,
    pub cleaner_loss: Option<f64>,
    pub classifier: C,
}

#[derive(Debug, Clone, Default)]
pub struct AlternationHistory<C = BuiltinClassifier> {
    steps: Vec<StepRecord<C>>,
}

impl<C> AlternationHistory<C> {
    pub fn steps(&self) -> &[StepRecord<C>] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn aucs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.evaluation.auc).collect()
    }

    pub fn last(&self) -> Option<&StepRecord<C>> {
        self.steps.last()
    }

    fn push(&mut self, record: StepRecord<C>) {
        self.steps.push(record);
    }
}

fn check_dataset(dataset: &[VideoBag], eval_set: &[VideoBag]) -> Result<()> {
    let anomalous = dataset.iter().filter(|b| b.is_anomalous()).count();
    if anomalous == 0 || anomalous == dataset.len() {
        return Err(Error::validation(
            "training set needs at least one anomalous and one normal video",
        ));
    }
    let dim = dataset[0].features.dim();
    for bag in dataset.iter().chain(eval_set) {
        bag.validate()?;
        if bag.features.dim() != dim {
            return Err(Error::shape("video feature width", dim, bag.features.dim()));
        }
    }
    if eval_set.is_empty() {
        return Err(Error::validation("evaluation set is empty"));
    }
    Ok(())
}

/// Runs the alternation with the built-in classifier.
pub fn run(config: &AlternationConfig, dataset: &[VideoBag], eval_set: &[VideoBag]) -> Result<AlternationHistory> {
    run_with(config, dataset, eval_set, |dim| {
        BuiltinClassifier::new(
            dim,
            BuiltinClassifierConfig {
                seed: derive_seed(config.seed, &[stream::CLASSIFIER_INIT]),
                ..config.classifier.clone()
            },
        )
    })
}

/// Runs the alternation with a caller-supplied classifier.
///
/// `make_classifier` receives the feature width and returns an untrained
/// classifier; step 1 trains it for `config.classifier.epochs`.
pub fn run_with<C, F>(
    config: &AlternationConfig,
    dataset: &[VideoBag],
    eval_set: &[VideoBag],
    make_classifier: F,
) -> Result<AlternationHistory<C>>
where
    C: SnippetClassifier + Clone + Sync,
    F: FnOnce(usize) -> Result<C>,
{
    config.validate()?;
    check_dataset(dataset, eval_set)?;
    let mut classifier = make_classifier(dataset[0].features.dim())?;
    let mut history = AlternationHistory { steps: Vec::new() };
    let keyed = |targets: Vec<Vec<f64>>| -> BTreeMap<String, Vec<f64>> {
        dataset.iter().map(|b| b.id.clone()).zip(targets).collect()
    };

    let targets = video_level_targets(dataset);
    train_on(&mut classifier, dataset, &targets, config.classifier.epochs)?;
    let evaluation = evaluate(&classifier, eval_set, config.eval_threshold)?;
    info!(
        "step 1: auc {:.4} far {:.4}",
        evaluation.auc, evaluation.false_alarm_rate
    );
    history.push(StepRecord {
        step: 1,
        evaluation,
        targets: keyed(targets),
        cleaned: CleanedLabels::new(),
        cleaner: None,
        cleaner_loss: None,
        classifier: classifier.clone(),
    });

    let mut previous_cleaner: Option<CleanerParams> = None;
    for step in 2..=config.n_steps {
        let warm = if config.warm_start_cleaner {
            previous_cleaner.as_ref()
        } else {
            None
        };
        let cleaned = clean_stage(&classifier, dataset, config, step as u64, warm)?;
        let targets = classify_stage(&mut classifier, dataset, &cleaned.labels, config.retrain_epochs)?;
        let evaluation = evaluate(&classifier, eval_set, config.eval_threshold)?;
        info!(
            "step {step}: auc {:.4} far {:.4} cleaner loss {:.4}",
            evaluation.auc, evaluation.false_alarm_rate, cleaned.final_loss
        );
        previous_cleaner.clone_from(&cleaned.cleaner);
        history.push(StepRecord {
            step,
            evaluation,
            targets: keyed(targets),
            cleaned: cleaned.labels,
            cleaner: cleaned.cleaner,
            cleaner_loss: Some(cleaned.final_loss),
            classifier: classifier.clone(),
        });
    }
    Ok(history)
}

/// Which branches and graphs an ablation uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub branches: Branches,
    pub graphs: GraphOverrides,
}

impl AblationSpec {
    pub fn label(&self) -> String {
        let name = |source: GraphSource| match source {
            GraphSource::Native => "native".to_string(),
            GraphSource::Constant(v) => format!("constant:{v}"),
        };
        match self.branches {
            Branches::Both => format!(
                "both(feature={},temporal={})",
                name(self.graphs.feature),
                name(self.graphs.temporal)
            ),
            Branches::FeatureOnly => format!("feature({})", name(self.graphs.feature)),
            Branches::TemporalOnly => format!("temporal({})", name(self.graphs.temporal)),
        }
    }

    pub fn apply(&self, config: &AlternationConfig) -> AlternationConfig {
        let mut out = config.clone();
        out.cleaner.branches = self.branches;
        out.graphs = self.graphs;
        out
    }

    /// Full model, each single branch, and each single branch with its graph
    /// replaced by the constant 0.5.
    pub fn standard_table() -> Vec<AblationSpec> {
        let native = GraphOverrides::default();
        let half = GraphSource::Constant(0.5);
        vec![
            AblationSpec {
                branches: Branches::Both,
                graphs: native,
            },
            AblationSpec {
                branches: Branches::TemporalOnly,
                graphs: native,
            },
            AblationSpec {
                branches: Branches::TemporalOnly,
                graphs: GraphOverrides {
                    temporal: half,
                    ..native
                },
            },
            AblationSpec {
                branches: Branches::FeatureOnly,
                graphs: native,
            },
            AblationSpec {
                branches: Branches::FeatureOnly,
                graphs: GraphOverrides {
                    feature: half,
                    ..native
                },
            },
        ]
    }
}
