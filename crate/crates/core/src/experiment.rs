//! Experiment driver behind the command-line tool.
//!
//! A [`RunConfig`] names a command, a data source, the module settings and an
//! output directory. [`run_experiment`] writes `config.json` into the output
//! directory before doing anything else, then executes the command.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::alternation::{self, AblationSpec, AlternationConfig, GraphOverrides, GraphSource};
use crate::cleaner::Branches;
use crate::error::{Error, Result};
use crate::io::{checkpoint, feature_file, run_dir};
use crate::synthdata::{self, SyntheticConfig, VideoBag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Write a synthetic dataset as feature files.
    Generate,
    /// Alternate training with per-step artifacts.
    #[default]
    Run,
    /// Score an evaluation set with a saved classifier.
    Eval,
    /// Train once per ablation setting and compare final AUCs.
    Ablate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum DataSource {
    /// The fixed synthetic benchmark.
    #[default]
    Standard,
    Synthetic {
        train: SyntheticConfig,
        eval: SyntheticConfig,
    },
    /// Directories of `.gcnf` feature files. Evaluation videos need ground
    /// truth; training videos only need their video label.
    Files {
        #[serde(default)]
        train_dir: Option<PathBuf>,
        eval_dir: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: Command,
    pub data: DataSource,
    pub alternation: AlternationConfig,
    /// Overrides `alternation.seed`.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Classifier checkpoint scored by `eval`.
    pub checkpoint: Option<PathBuf>,
    /// Settings compared by `ablate`; empty means the standard table.
    pub ablations: Vec<AblationSpec>,
    /// `ablate` repeats every setting with seeds `seed..seed + ablation_seeds`.
    pub ablation_seeds: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Run,
            data: DataSource::Standard,
            alternation: AlternationConfig::benchmark(),
            seed: 0,
            out_dir: None,
            checkpoint: None,
            ablations: Vec::new(),
            ablation_seeds: 1,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        run_dir::read_json(path)
    }

    /// The alternation settings with the top-level seed applied.
    pub fn effective_alternation(&self) -> AlternationConfig {
        AlternationConfig {
            seed: self.seed,
            ..self.alternation.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dir.is_none() {
            return Err(Error::validation("an output directory is required"));
        }
        match (&self.command, &self.data) {
            (Command::Generate, DataSource::Files { .. }) => {
                return Err(Error::validation("generate needs a synthetic data source"));
            }
            (Command::Run | Command::Ablate, DataSource::Files { train_dir: None, .. }) => {
                return Err(Error::validation("training needs data.train_dir"));
            }
            _ => {}
        }
        if let DataSource::Synthetic { train, eval } = &self.data {
            train.validate()?;
            eval.validate()?;
        }
        match self.command {
            Command::Eval if self.checkpoint.is_none() => Err(Error::validation("eval needs a classifier checkpoint")),
            Command::Ablate if self.ablation_seeds == 0 => Err(Error::validation("ablation_seeds must be >= 1")),
            _ => self.effective_alternation().validate(),
        }
    }
}

/// Parses `branch=<both|feature|temporal>,graph=<native|constant:v>`.
///
/// `graph` applies to every enabled branch; `feature_graph` and
/// `temporal_graph` set one branch each. Keys may appear in any order.
pub fn parse_ablation(spec: &str) -> Result<AblationSpec> {
    let mut branches = Branches::Both;
    let mut shared: Option<GraphSource> = None;
    let mut graphs = GraphOverrides::default();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("ablation term {part:?} is not key=value")))?;
        match key.trim() {
            "branch" => branches = parse_branch(value)?,
            "graph" => shared = Some(parse_graph(value)?),
            "feature_graph" => graphs.feature = parse_graph(value)?,
            "temporal_graph" => graphs.temporal = parse_graph(value)?,
            other => return Err(Error::validation(format!("unknown ablation key {other:?}"))),
        }
    }
    if let Some(source) = shared {
        if branches.feature() {
            graphs.feature = source;
        }
        if branches.temporal() {
            graphs.temporal = source;
        }
    }
    Ok(AblationSpec { branches, graphs })
}

pub fn parse_branch(value: &str) -> Result<Branches> {
    match value.trim() {
        "both" => Ok(Branches::Both),
        "feature" => Ok(Branches::FeatureOnly),
        "temporal" => Ok(Branches::TemporalOnly),
        other => Err(Error::validation(format!("unknown branch {other:?}"))),
    }
}

pub fn parse_graph(value: &str) -> Result<GraphSource> {
    let value = value.trim();
    if value == "native" {
        return Ok(GraphSource::Native);
    }
    let v = value
        .strip_prefix("constant:")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| Error::validation(format!("graph must be native or constant:<value>, got {value:?}")))?;
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::validation(format!("constant graph value {v} outside (0, 1]")));
    }
    Ok(GraphSource::Constant(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub false_alarm_rate: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub spec: AblationSpec,
    pub seeds: Vec<u64>,
    /// Final-step eval AUC per seed.
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Summary {
    Generated { train_videos: usize, eval_videos: usize },
    Run { metrics: run_dir::Metrics },
    Eval(EvalReport),
    Ablation(AblationReport),
}

fn load_data(source: &DataSource, need_train: bool) -> Result<(Vec<VideoBag>, Vec<VideoBag>)> {
    match source {
        DataSource::Standard => {
            let b = synthdata::standard_benchmark();
            Ok((b.train, b.eval))
        }
        DataSource::Synthetic { train, eval } => Ok((synthdata::generate(train)?, synthdata::generate(eval)?)),
        DataSource::Files { train_dir, eval_dir } => {
            let train = match train_dir {
                Some(dir) if need_train => feature_file::load_dir(dir)?,
                _ => Vec::new(),
            };
            Ok((train, feature_file::load_dir(eval_dir)?))
        }
    }
}

/// Executes `config.command`.
pub fn run_experiment(config: &RunConfig) -> Result<Summary> {
    config.validate()?;
    let out = config.out_dir.as_deref().expect("validated");
    fs::create_dir_all(out)?;
    run_dir::write_json(out.join("config.json"), config)?;

    match config.command {
        Command::Generate => {
            let (train, eval) = load_data(&config.data, true)?;
            feature_file::save_dir(out.join("train"), &train, false)?;
            feature_file::save_dir(out.join("eval"), &eval, true)?;
            info!(
                "wrote {} train and {} eval videos to {}",
                train.len(),
                eval.len(),
                out.display()
            );
            Ok(Summary::Generated {
                train_videos: train.len(),
                eval_videos: eval.len(),
            })
        }
        Command::Run => {
            let (train, eval) = load_data(&config.data, true)?;
            let history = alternation::run(&config.effective_alternation(), &train, &eval)?;
            run_dir::write_history(out, &history)?;
            Ok(Summary::Run {
                metrics: run_dir::metrics_of(&history),
            })
        }
        Command::Eval => {
            let (_, eval) = load_data(&config.data, false)?;
            let ckpt = checkpoint::load(config.checkpoint.as_deref().expect("validated"))?;
            let classifier = checkpoint::classifier_from_checkpoint(&ckpt)?;
            let threshold = config.alternation.eval_threshold;
            let evaluation = alternation::evaluate(&classifier, &eval, threshold)?;
            evaluation
                .roc
                .write_csv(std::io::BufWriter::new(fs::File::create(out.join("roc.csv"))?))?;
            let report = EvalReport {
                auc: evaluation.auc,
                false_alarm_rate: evaluation.false_alarm_rate,
                threshold,
            };
            run_dir::write_json(out.join("eval.json"), &report)?;
            Ok(Summary::Eval(report))
        }
        Command::Ablate => {
            let (train, eval) = load_data(&config.data, true)?;
            let specs = if config.ablations.is_empty() {
                AblationSpec::standard_table()
            } else {
                config.ablations.clone()
            };
            let seeds: Vec<u64> = (0..config.ablation_seeds)
                .map(|k| config.seed.wrapping_add(k))
                .collect();
            let mut rows = Vec::with_capacity(specs.len());
            for spec in specs {
                let mut aucs = Vec::with_capacity(seeds.len());
                for &seed in &seeds {
                    let cfg = spec.apply(&AlternationConfig {
                        seed,
                        ..config.alternation.clone()
                    });
                    let history = alternation::run(&cfg, &train, &eval)?;
                    aucs.push(history.last().expect("n_steps >= 1").evaluation.auc);
                }
                let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
                info!("ablation {}: mean auc {mean_auc:.4}", spec.label());
                rows.push(AblationRow {
                    label: spec.label(),
                    spec,
                    seeds: seeds.clone(),
                    aucs,
                    mean_auc,
                });
            }
            let report = AblationReport { rows };
            run_dir::write_json(out.join("ablation.json"), &report)?;
            Ok(Summary::Ablation(report))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_spec_strings() {
        let s = parse_ablation("branch=temporal,graph=constant:0.5").unwrap();
        assert_eq!(s.branches, Branches::TemporalOnly);
        assert_eq!(s.graphs.temporal, GraphSource::Constant(0.5));
        assert_eq!(s.graphs.feature, GraphSource::Native);
        assert_eq!(s.label(), "temporal(constant:0.5)");

        let s = parse_ablation("graph=constant:0.25").unwrap();
        assert_eq!(s.graphs.feature, GraphSource::Constant(0.25));
        assert_eq!(s.graphs.temporal, GraphSource::Constant(0.25));

        assert!(parse_ablation("branch=spatial").is_err());
        assert!(parse_ablation("graph=constant:0").is_err());
        assert!(parse_ablation("graph=dense").is_err());
        assert!(parse_ablation("branch").is_err());
    }

    #[test]
    fn required_fields_per_command() {
        let base = RunConfig {
            out_dir: Some("out".into()),
            ..RunConfig::default()
        };
        base.validate().unwrap();
        assert!(RunConfig {
            out_dir: None,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            command: Command::Eval,
            ..base.clone()
        }
        .validate()
        .is_err());
        let files = DataSource::Files {
            train_dir: None,
            eval_dir: "eval".into(),
        };
        assert!(RunConfig {
            data: files.clone(),
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(RunConfig {
            command: Command::Generate,
            data: files.clone(),
            ..base.clone()
        }
        .validate()
        .is_err());
        RunConfig {
            command: Command::Eval,
            data: files,
            checkpoint: Some("c.gcnc".into()),
            ..base
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn partial_json_config_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"command":"ablate","seed":7,"alternation":{"n_steps":2}}"#).unwrap();
        assert_eq!(cfg.command, Command::Ablate);
        assert_eq!(cfg.alternation.n_steps, 2);
        assert_eq!(cfg.alternation.ema_alpha, 0.6);
        assert_eq!(cfg.effective_alternation().seed, 7);
    }
}
