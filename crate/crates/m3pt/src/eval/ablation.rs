//! The three ablation axes: modality dropping, temporal context, and
//! segment length.
//!
//! Each ablation cell is a full retrain (tokenizers included where the
//! segment geometry changes). Dropping a modality removes its tokens from
//! the layout entirely, shrinking the sequence by `T * P` positions; labels
//! still come from an unablated segmentation pass over the same windows.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fold::{aggregate_folds, run_fold, ExperimentConfig, FoldRun};
use super::MetricsReport;
use crate::data::FoldSplit;
use crate::error::{Error, Result};
use crate::model::Task;
use crate::signal::{ModalityKind, ModalitySet, SessionTimeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    DropModality,
    TemporalContext,
    SegmentLength,
}

impl AblationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "drop_modality" => Ok(AblationKind::DropModality),
            "temporal_context" => Ok(AblationKind::TemporalContext),
            "segment_length" => Ok(AblationKind::SegmentLength),
            other => Err(Error::config(format!("unknown ablation kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationKind::DropModality => "drop_modality",
            AblationKind::TemporalContext => "temporal_context",
            AblationKind::SegmentLength => "segment_length",
        }
    }
}

/// One cell of an ablation table: a labeled configuration delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub kind: AblationKind,
    pub label: String,
    /// For `DropModality`: the surviving modality set.
    pub modalities: Option<Vec<ModalityKind>>,
    /// For the temporal axes: (segments_per_window, segment_seconds).
    pub geometry: Option<(usize, f64)>,
    /// Run with the reduced model profile.
    pub smaller_model: bool,
}

/// Temporal-context cells: segment size pinned to 3 s, context grows.
pub const TEMPORAL_CONTEXT_SEGMENTS: [usize; 4] = [2, 3, 6, 12];
/// Segment-length cells: total time pinned to 36 s.
pub const SEGMENT_LENGTH_GEOMETRY: [(usize, f64); 4] =
    [(2, 18.0), (4, 9.0), (6, 6.0), (12, 3.0)];

/// The standard row set for an ablation axis.
pub fn ablation_cells(kind: AblationKind, base: &ModalitySet) -> Vec<AblationSpec> {
    match kind {
        AblationKind::DropModality => {
            let all: Vec<ModalityKind> = base.iter().map(|m| m.kind).collect();
            let mut cells = vec![AblationSpec {
                kind,
                label: "All Features".into(),
                modalities: Some(all.clone()),
                geometry: None,
                smaller_model: false,
            }];
            for drop in &all {
                let survivors: Vec<ModalityKind> =
                    all.iter().copied().filter(|k| k != drop).collect();
                cells.push(AblationSpec {
                    kind,
                    label: format!("No {}", capitalize(drop.name())),
                    modalities: Some(survivors),
                    geometry: None,
                    smaller_model: false,
                });
            }
            for (only, label) in [
                (ModalityKind::Speaker, "Speaker Only"),
                (ModalityKind::Bite, "Bite Only"),
            ] {
                if base.get(only).is_some() {
                    cells.push(AblationSpec {
                        kind,
                        label: label.into(),
                        modalities: Some(vec![only]),
                        geometry: None,
                        smaller_model: false,
                    });
                }
            }
            cells
        }
        AblationKind::TemporalContext => TEMPORAL_CONTEXT_SEGMENTS
            .iter()
            .map(|&t| AblationSpec {
                kind,
                label: format!("{t}x3s"),
                modalities: None,
                geometry: Some((t, 3.0)),
                smaller_model: true,
            })
            .collect(),
        AblationKind::SegmentLength => SEGMENT_LENGTH_GEOMETRY
            .iter()
            .map(|&(t, c)| AblationSpec {
                kind,
                label: format!("{t}x{c:.0}s"),
                modalities: None,
                geometry: Some((t, c)),
                smaller_model: false,
            })
            .collect(),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Applies a cell to the base experiment configuration.
pub fn apply_cell(base: &ExperimentConfig, cell: &AblationSpec) -> Result<ExperimentConfig> {
    let mut config = base.clone();
    if let Some(kinds) = &cell.modalities {
        config.modalities = base.modalities.keep_only(kinds)?;
        // a head may survive the loss of its own modality (it falls back to
        // the other discrete slot) but not the loss of both
        if config.modalities.get(ModalityKind::Speaker).is_none()
            && config.modalities.get(ModalityKind::Bite).is_none()
        {
            return Err(Error::config(format!(
                "cell `{}` drops both speaker and bite tokens; the heads have no readout",
                cell.label
            )));
        }
    }
    if let Some((segments, seconds)) = cell.geometry {
        config.segment.segments_per_window = segments;
        config.segment.segment_seconds = seconds;
        // rolling stride stays at half the window
        config.segment.window_stride_s = segments as f64 * seconds / 2.0;
    }
    if cell.smaller_model {
        config.hidden_dim = (config.hidden_dim / 2).max(config.num_heads);
        config.num_layers = config.num_layers.div_ceil(2);
    }
    Ok(config)
}

/// One emitted row: aggregated metrics per task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub per_task: BTreeMap<Task, MetricsReport>,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row_labels(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.label.as_str()).collect()
    }

    /// Aligned text rendering of the results: one block per
    /// task, `mean ± std` per metric.
    pub fn render(&self, include_accuracy: bool) -> String {
        let mut out = String::new();
        for task in Task::ALL {
            if !self.rows.iter().any(|r| r.per_task.contains_key(&task)) {
                continue;
            }
            out.push_str(&format!("## {} ({})\n", task, self.kind.name()));
            let mut header = format!("{:<16}", "Features");
            if include_accuracy {
                header.push_str(&format!("{:<14}", "Accuracy"));
            }
            for m in ["F1", "Precision", "Recall", "nMCC"] {
                header.push_str(&format!("{m:<14}"));
            }
            out.push_str(&header);
            out.push('\n');
            for row in self.rows_for(task) {
                let report = &row.per_task[&task];
                let mut line = format!("{:<16}", row.label);
                if include_accuracy {
                    line.push_str(&format!("{:<14}", report.accuracy.display()));
                }
                for agg in [&report.f1, &report.precision, &report.recall, &report.nmcc] {
                    line.push_str(&format!("{:<14}", agg.display()));
                }
                out.push_str(&line);
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }

    /// A task's rows: for modality dropping, the row removing the task's
    /// own modality is not shown for that task, and "<Other> Only" rows
    /// belong to the other task.
    pub fn rows_for(&self, task: Task) -> Vec<&AblationRow> {
        self.rows
            .iter()
            .filter(|r| {
                if !r.per_task.contains_key(&task) {
                    return false;
                }
                if self.kind != AblationKind::DropModality {
                    return true;
                }
                match task {
                    Task::Speaking => r.label != "No Speaker" && r.label != "Bite Only",
                    Task::Bite => r.label != "No Bite" && r.label != "Speaker Only",
                }
            })
            .collect()
    }
}

/// Runs every cell of an ablation axis over the given folds.
///
/// A failed fold is excluded from aggregation with a warning; a cell with no
/// surviving folds is an error.
pub fn run_ablation(
    kind: AblationKind,
    sessions: &BTreeMap<String, SessionTimeline>,
    folds: &[FoldSplit],
    base: &ExperimentConfig,
) -> Result<AblationTable> {
    run_ablation_with_jobs(kind, sessions, folds, base, 1)
}

/// [`run_ablation`] with up to `jobs` folds of each cell running on their
/// own threads. Every fold run owns its model and tokenizer state; the
/// shared session map is read-only.
pub fn run_ablation_with_jobs(
    kind: AblationKind,
    sessions: &BTreeMap<String, SessionTimeline>,
    folds: &[FoldSplit],
    base: &ExperimentConfig,
    jobs: usize,
) -> Result<AblationTable> {
    let jobs = jobs.max(1);
    let cells = ablation_cells(kind, &base.modalities);
    let mut rows = Vec::new();
    for cell in &cells {
        let config = apply_cell(base, cell)?;
        let mut results: Vec<Option<std::result::Result<FoldRun, String>>> =
            (0..folds.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in folds.chunks(folds.len().div_ceil(jobs)) {
                let config = &config;
                handles.push(scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|fold| {
                            (
                                fold.fold_id,
                                run_fold(sessions, fold, config).map_err(|e| e.to_string()),
                            )
                        })
                        .collect::<Vec<_>>()
                }));
            }
            for handle in handles {
                for (fold_id, result) in handle.join().expect("fold worker panicked") {
                    let slot = folds.iter().position(|f| f.fold_id == fold_id).unwrap();
                    results[slot] = Some(result);
                }
            }
        });

        let mut runs: Vec<FoldRun> = Vec::new();
        let mut failed = 0usize;
        for (fold, result) in folds.iter().zip(results) {
            match result.expect("every fold ran") {
                Ok(run) => runs.push(run),
                Err(e) => {
                    failed += 1;
                    log::warn!(
                        "ablation cell `{}` fold {} failed: {e}",
                        cell.label,
                        fold.fold_id
                    );
                }
            }
        }
        if runs.is_empty() {
            return Err(Error::numeric(format!(
                "ablation cell `{}`: every fold failed",
                cell.label
            )));
        }
        rows.push(AblationRow {
            label: cell.label.clone(),
            per_task: aggregate_folds(&runs)?,
            failed_folds: failed,
        });
    }
    Ok(AblationTable { kind, rows })
}
