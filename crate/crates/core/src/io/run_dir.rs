//! Run directory layout.
//!
//! ```text
//! <out>/config.json                  config snapshot, written before training
//! <out>/metrics.json                 one entry per step
//! <out>/step_NN/record.json          step index, metrics, relative file paths
//! <out>/step_NN/classifier.gcnc      classifier checkpoint
//! <out>/step_NN/cleaner.gcnc         shared cleaner checkpoint (steps >= 2)
//! <out>/step_NN/roc.csv              threshold,fpr,tpr
//! <out>/step_NN/labels/<id>.json     cleaned labels of one anomalous video
//! ```
//!
//! Paths recorded inside JSON files are relative to `<out>`, so identical
//! runs produce byte-identical metadata wherever they are written.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint;
use crate::alternation::{AlternationHistory, StepRecord};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub auc: f64,
    pub false_alarm_rate: f64,
    pub cleaner_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps: Vec<StepMetrics>,
}

/// Training-label file contents: cleaned soft labels only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFile {
    pub video_id: String,
    pub step: usize,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFileRecord {
    pub step: usize,
    pub metrics: StepMetrics,
    pub label_files: Vec<String>,
    pub classifier_checkpoint: String,
    pub cleaner_checkpoint: Option<String>,
    pub roc_csv: String,
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn step_metrics(record: &StepRecord) -> StepMetrics {
    StepMetrics {
        step: record.step,
        auc: record.evaluation.auc,
        false_alarm_rate: record.evaluation.false_alarm_rate,
        cleaner_loss: record.cleaner_loss,
    }
}

pub fn metrics_of(history: &AlternationHistory) -> Metrics {
    Metrics {
        steps: history.steps().iter().map(step_metrics).collect(),
    }
}

fn step_dir_name(step: usize) -> String {
    format!("step_{step:02}")
}

/// Writes every step's artifacts and `metrics.json`. Returns the metrics
/// file path.
pub fn write_history(out: &Path, history: &AlternationHistory) -> Result<PathBuf> {
    for record in history.steps() {
        let rel_dir = PathBuf::from(step_dir_name(record.step));
        let dir = out.join(&rel_dir);
        fs::create_dir_all(&dir)?;

        let mut label_files = Vec::new();
        if !record.cleaned.is_empty() {
            fs::create_dir_all(dir.join("labels"))?;
            for (id, labels) in &record.cleaned {
                let rel = rel_dir.join("labels").join(format!("{id}.json"));
                write_json(
                    out.join(&rel),
                    &LabelFile {
                        video_id: id.clone(),
                        step: record.step,
                        labels: labels.clone(),
                    },
                )?;
                label_files.push(rel.to_string_lossy().into_owned());
            }
        }

        let classifier_rel = rel_dir.join("classifier.gcnc");
        checkpoint::save(
            out.join(&classifier_rel),
            &checkpoint::classifier_to_checkpoint(&record.classifier)?,
        )?;

        let cleaner_rel = match &record.cleaner {
            Some(params) => {
                let rel = rel_dir.join("cleaner.gcnc");
                checkpoint::save(out.join(&rel), &checkpoint::cleaner_to_checkpoint(params)?)?;
                Some(rel.to_string_lossy().into_owned())
            }
            None => None,
        };

        let roc_rel = rel_dir.join("roc.csv");
        record
            .evaluation
            .roc
            .write_csv(std::io::BufWriter::new(fs::File::create(out.join(&roc_rel))?))?;

        write_json(
            dir.join("record.json"),
            &StepFileRecord {
                step: record.step,
                metrics: step_metrics(record),
                label_files,
                classifier_checkpoint: classifier_rel.to_string_lossy().into_owned(),
                cleaner_checkpoint: cleaner_rel,
                roc_csv: roc_rel.to_string_lossy().into_owned(),
            },
        )?;
    }
    let path = out.join("metrics.json");
    write_json(&path, &metrics_of(history))?;
    Ok(path)
}
