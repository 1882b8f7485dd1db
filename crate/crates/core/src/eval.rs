//! ROC curve, AUC and false-alarm rate over snippet scores.
//!
//! A score at or above a threshold counts as an alarm, both here and in the
//! ROC sweep, so `false_alarm_rate(t)` equals the ROC false-positive rate
//! at threshold `t`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending; the first entry is `+inf` for the `(0, 0)` point.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.fpr
            .windows(2)
            .zip(self.tpr.windows(2))
            .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) * 0.5)
            .sum()
    }

    /// Writes `threshold,fpr,tpr` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "threshold,fpr,tpr")?;
        for i in 0..self.fpr.len() {
            writeln!(out, "{},{},{}", self.thresholds[i], self.fpr[i], self.tpr[i])?;
        }
        Ok(())
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::shape("score/label length", labels.len(), scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("scores must be finite"));
    }
    let mut pos = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => pos += 1,
            other => return Err(Error::validation(format!("label {other} is not binary"))),
        }
    }
    Ok((pos, labels.len() - pos))
}

pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::validation(
            "ROC needs at least one positive and one negative label",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(s);
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
    }
    Ok(RocCurve { thresholds, fpr, tpr })
}

/// Area under the ROC curve; ties between a positive and a negative score
/// count one half, matching the Mann-Whitney statistic.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.area())
}

/// Fraction of negatives scored at or above `threshold`.
pub fn false_alarm_rate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    let (_, neg) = check_inputs(scores, labels)?;
    if neg == 0 {
        return Err(Error::validation("false alarm rate needs at least one negative label"));
    }
    let alarms = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| l == 0 && s >= threshold)
        .count();
    Ok(alarms as f64 / neg as f64)
}

/// Repeats every snippet score and label `factor` times (snippet to frame
/// expansion).
pub fn expand_to_frames(scores: &[f64], labels: &[u8], factor: usize) -> (Vec<f64>, Vec<u8>) {
    let s = scores.iter().flat_map(|&v| std::iter::repeat_n(v, factor)).collect();
    let l = labels.iter().flat_map(|&v| std::iter::repeat_n(v, factor)).collect();
    (s, l)
}
