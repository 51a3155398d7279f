//! Metrics, fold execution, and ablation plumbing.
//!
//! Binary-classification metrics are computed from explicit confusion
//! counts. Degenerate denominators yield 0 with a flag rather than NaN, and
//! the normalized Matthews correlation coefficient is the affine map
//! `(MCC + 1) / 2`, so an uninformative classifier sits at 0.5.

pub mod ablation;
pub mod fold;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ablation::{ablation_cells, apply_cell, run_ablation, run_ablation_with_jobs, AblationKind, AblationRow, AblationSpec, AblationTable};
pub use fold::{
    aggregate_folds, collect_modality_chunks, evaluate_model, make_folds, run_fold,
    run_fold_from_manifest, run_fold_with_model, split_validation_sessions, tokenize_windows,
    train_tokenizer_bank, windows_for_sessions, windows_restricted, ExperimentConfig, FoldRun, PhaseAudit,
};

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Counts prediction/label agreement. Predictions come from logits
/// thresholded at 0, i.e. probability one-half.
pub fn confusion(predictions: &[bool], labels: &[bool]) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "confusion: {} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::config("confusion: empty inputs"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in predictions.iter().zip(labels.iter()) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Metrics for one task on one fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub nmcc: f64,
    /// Set when any metric denominator was 0 and the value was defined as 0.
    pub degenerate: bool,
    pub counts: ConfusionCounts,
}

/// Derives the metric set from confusion counts.
pub fn metrics(counts: &ConfusionCounts) -> Result<MetricsEntry> {
    if counts.total() == 0 {
        return Err(Error::config("metrics: empty confusion matrix"));
    }
    let (tp, fp, tn, fn_) = (
        counts.tp as f64,
        counts.fp as f64,
        counts.tn as f64,
        counts.fn_ as f64,
    );
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let accuracy = (tp + tn) / counts.total() as f64;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    let mcc_den_sq = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if mcc_den_sq == 0.0 {
        degenerate = true;
        0.0
    } else {
        (tp * tn - fp * fn_) / mcc_den_sq.sqrt()
    };
    Ok(MetricsEntry {
        accuracy,
        precision,
        recall,
        f1,
        mcc,
        nmcc: (mcc + 1.0) / 2.0,
        degenerate,
        counts: *counts,
    })
}

/// Mean and population standard deviation of one metric across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    /// The papers' table format: `m ± s` with two decimals.
    pub fn display(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }
}

fn aggregate_values(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Aggregate {
        mean,
        std: var.sqrt(),
    }
}

/// Per-metric aggregation over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub entries: Vec<MetricsEntry>,
    pub accuracy: Aggregate,
    pub precision: Aggregate,
    pub recall: Aggregate,
    pub f1: Aggregate,
    pub nmcc: Aggregate,
}

/// Aggregates fold entries (mean, population std). Errors on zero folds.
pub fn aggregate(entries: &[MetricsEntry]) -> Result<MetricsReport> {
    if entries.is_empty() {
        return Err(Error::config("aggregate: no successful folds"));
    }
    let pick = |f: fn(&MetricsEntry) -> f64| {
        aggregate_values(&entries.iter().map(f).collect::<Vec<_>>())
    };
    Ok(MetricsReport {
        entries: entries.to_vec(),
        accuracy: pick(|e| e.accuracy),
        precision: pick(|e| e.precision),
        recall: pick(|e| e.recall),
        f1: pick(|e| e.f1),
        nmcc: pick(|e| e.nmcc),
    })
}
