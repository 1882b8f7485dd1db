//! Graph-convolutional label-noise cleaning for weakly supervised video
//! anomaly detection.
//!
//! Training videos carry only a video-level label. A snippet classifier is
//! first trained with every snippet of an anomalous video marked anomalous;
//! a two-branch graph network (feature similarity and temporal consistency)
//! then cleans those labels, and the classifier is retrained on the cleaned
//! labels. The two stages alternate. At test time only the classifier runs.
//!
//! ```no_run
//! use nck_core::{alternation, synthdata};
//!
//! let bench = synthdata::standard_benchmark();
//! let config = alternation::AlternationConfig::benchmark();
//! let history = alternation::run(&config, &bench.train, &bench.eval)?;
//! println!("{:?}", history.aucs());
//! # Ok::<(), nck_core::Error>(())
//! ```

pub mod alternation;
pub mod classifier;
pub mod cleaner;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod graphs;
pub mod instrument;
pub mod io;
pub mod loss;
pub mod optim;
pub mod rng;
pub mod synthdata;

pub use alternation::{AblationSpec, AlternationConfig, AlternationHistory, CleanedLabels, GraphSource, StepRecord};
pub use classifier::{BuiltinClassifier, BuiltinClassifierConfig, SnippetClassifier, TrainingVideo};
pub use cleaner::{Activation, Branches, CleanerConfig, CleanerParams};
pub use error::{Error, Result};
pub use eval::RocCurve;
pub use experiment::{run_experiment, Command, DataSource, RunConfig, Summary};
pub use graphs::{Adjacency, AdjacencyKind, FeatureMatrix, RenormalizedAdjacency};
pub use loss::{EmaState, HighConfidenceSet, NoisySnippetLabels};
pub use optim::{Optimizer, OptimizerKind};
pub use synthdata::{StandardBenchmark, SyntheticConfig, VideoBag};
