//! Fold execution: tokenizer training, transformer training, and held-out
//! evaluation, with an audit trail of which sessions each phase touched.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{aggregate, confusion, metrics, MetricsEntry, MetricsReport};
use crate::data::{DatasetManifest, FoldSplit};
use crate::error::{Error, Result};
use crate::mask::{MaskKind, MaskSpec};
use crate::model::{
    logits_to_predictions, tokenize_grid, train_model, HeadTasks, M3ptModel, ModelConfig,
    ModelTrainReport, ModelTrainSettings, Task, TimeEncoding, TokenizerBank, WindowTokens,
};
use crate::signal::{segment_session, ModalitySet, SegmentConfig, SegmentData, SegmentGrid, SessionTimeline};
use crate::vq::{train_tokenizer, TokenizerConfig, TrainReport, VqTrainSettings};

pub use crate::data::make_folds;

/// Everything a fold run needs, serializable into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub segment: SegmentConfig,
    pub modalities: ModalitySet,
    // tokenizer profile, applied to each continuous modality
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub conv_widths: Vec<usize>,
    pub kernel: usize,
    pub commitment: f64,
    pub vq_train: VqTrainSettings,
    // transformer profile
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub mask_kind: MaskKind,
    pub placeholder_inputs: bool,
    pub head_tasks: HeadTasks,
    pub time_encoding: TimeEncoding,
    pub model_train: ModelTrainSettings,
    /// Training sessions held out for validation-based model selection;
    /// session-level so validation windows never overlap training windows.
    pub val_sessions: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// The recorded-protocol configuration: 12 x 3 s windows, full modality
    /// set, default model.
    pub fn paper_default() -> Self {
        ExperimentConfig {
            segment: SegmentConfig::paper_default(),
            modalities: ModalitySet::full_default(8, 8),
            latent_dim: 64,
            codebook_size: 256,
            conv_widths: vec![32, 32],
            kernel: 3,
            commitment: 0.25,
            vq_train: VqTrainSettings::default(),
            hidden_dim: 256,
            num_layers: 4,
            num_heads: 8,
            ff_mult: 4,
            dropout: 0.1,
            mask_kind: MaskKind::blockwise(),
            placeholder_inputs: false,
            head_tasks: HeadTasks::both(),
            time_encoding: TimeEncoding::LearnedCyclic,
            model_train: ModelTrainSettings::default(),
            val_sessions: 1,
            seed: 0,
        }
    }

    /// Desk-scale profile: reduced modalities, 6 x 3 s windows at 5 fps,
    /// tiny tokenizers and model, unit class weights (so the trained
    /// posterior is comparable with the Bayes oracle's threshold rule).
    pub fn smoke() -> Self {
        ExperimentConfig {
            segment: SegmentConfig {
                segment_seconds: 3.0,
                segments_per_window: 6,
                window_stride_s: 9.0,
                target_fps: 5.0,
                speaking_threshold: 0.30,
            },
            modalities: ModalitySet::smoke_default(),
            latent_dim: 8,
            codebook_size: 16,
            conv_widths: vec![12],
            kernel: 3,
            commitment: 0.25,
            vq_train: VqTrainSettings {
                epochs: 12,
                batch_size: 32,
                lr: 2e-3,
                seed: 0,
            },
            hidden_dim: 48,
            num_layers: 2,
            num_heads: 4,
            ff_mult: 2,
            dropout: 0.0,
            mask_kind: MaskKind::blockwise(),
            placeholder_inputs: true,
            head_tasks: HeadTasks::both(),
            time_encoding: TimeEncoding::LearnedCyclic,
            model_train: ModelTrainSettings {
                steps: 4000,
                batch_windows: 8,
                lr: 1e-3,
                seed: 0,
                eval_every: 250,
                patience: 5,
                min_steps: 2000,
                clip_norm: 1.0,
                class_weighting: false,
            },
            val_sessions: 1,
            seed: 0,
        }
    }

    pub fn tokenizer_config(&self, modality: crate::signal::Modality) -> TokenizerConfig {
        TokenizerConfig {
            modality,
            latent_dim: self.latent_dim,
            codebook_size: self.codebook_size,
            frames_per_segment: self.segment.frames_per_segment(),
            conv_channel_widths: self.conv_widths.clone(),
            kernel: self.kernel,
            commitment_coefficient: self.commitment,
        }
    }

    pub fn model_config(&self, num_persons: usize, tokenizers: &TokenizerBank) -> ModelConfig {
        let spec = MaskSpec::new(
            self.segment.segments_per_window,
            num_persons,
            self.modalities.len(),
        )
        .expect("positive dims");
        ModelConfig {
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ff_mult: self.ff_mult,
            spec,
            modalities: self.modalities.clone(),
            mask_kind: self.mask_kind,
            dropout: self.dropout,
            placeholder_inputs: self.placeholder_inputs,
            head_tasks: self.head_tasks,
            latent_dims: BTreeMap::new(),
            time_encoding: self.time_encoding,
        }
        .with_latent_dims(tokenizers)
    }
}

/// Which sessions (or files) each phase of a run consumed. The invariant
/// under test: no test-session resource appears in a training phase.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PhaseAudit {
    pub records: Vec<(String, Vec<String>)>,
}

impl PhaseAudit {
    pub fn record(&mut self, phase: &str, resources: Vec<String>) {
        self.records.push((phase.to_string(), resources));
    }

    /// Resources consumed by phases whose name contains `needle`.
    pub fn resources_for(&self, needle: &str) -> Vec<&String> {
        self.records
            .iter()
            .filter(|(phase, _)| phase.contains(needle))
            .flat_map(|(_, r)| r.iter())
            .collect()
    }

    /// True iff no training-phase resource mentions any of the given ids.
    pub fn training_isolated_from(&self, test_ids: &[String]) -> bool {
        self.resources_for("train")
            .iter()
            .all(|r| !test_ids.iter().any(|id| r.contains(id.as_str())))
    }
}

/// Segments a set of sessions into windows.
pub fn windows_for_sessions(
    sessions: &[&SessionTimeline],
    segment: &SegmentConfig,
) -> Result<Vec<SegmentGrid>> {
    let mut grids = Vec::new();
    for s in sessions {
        grids.extend(segment_session(s, segment)?);
    }
    Ok(grids)
}

/// Segments sessions and keeps only the configured modalities' token slots;
/// labels always come from the full-stream segmentation pass.
pub fn windows_restricted(
    sessions: &[&SessionTimeline],
    config: &ExperimentConfig,
) -> Result<Vec<SegmentGrid>> {
    windows_for_sessions(sessions, &config.segment)?
        .iter()
        .map(|g| g.restrict_to(&config.modalities))
        .collect()
}

/// All continuous chunks of one modality across a set of grids.
pub fn collect_modality_chunks(
    grids: &[SegmentGrid],
    modality_index: usize,
) -> Vec<Array2<f64>> {
    let mut chunks = Vec::new();
    for grid in grids {
        for t in 0..grid.num_segments {
            for person in 0..grid.num_persons {
                if let SegmentData::Continuous(c) = grid.segment(t, person, modality_index) {
                    chunks.push(c.clone());
                }
            }
        }
    }
    chunks
}

/// Trains one tokenizer per continuous modality on the given grids.
pub fn train_tokenizer_bank(
    grids: &[SegmentGrid],
    config: &ExperimentConfig,
) -> Result<(TokenizerBank, Vec<(String, TrainReport)>)> {
    let mut bank = TokenizerBank::new();
    let mut reports = Vec::new();
    for (idx, modality) in config.modalities.iter().enumerate() {
        if modality.is_discrete {
            continue;
        }
        let chunks = collect_modality_chunks(grids, idx);
        if chunks.is_empty() {
            return Err(Error::config(format!(
                "no {} chunks available for tokenizer training",
                modality.kind
            )));
        }
        let (tok, report) = train_tokenizer(
            &chunks,
            config.tokenizer_config(*modality),
            &config.vq_train,
        )?;
        reports.push((modality.kind.name().to_string(), report));
        bank.insert(modality.kind, tok);
    }
    Ok((bank, reports))
}

/// Tokenizes grids into transformer-ready windows.
pub fn tokenize_windows(grids: &[SegmentGrid], bank: &TokenizerBank) -> Result<Vec<WindowTokens>> {
    grids.iter().map(|g| tokenize_grid(g, bank)).collect()
}

/// Splits a fold's training sessions into (train, validation) by session,
/// holding out the lexicographically last ids. Rolling windows overlap
/// within a session, so a window-level split would leak training content
/// into validation; session-level held-out windows share nothing.
pub fn split_validation_sessions(
    mut train_ids: Vec<String>,
    val_sessions: usize,
) -> (Vec<String>, Vec<String>) {
    train_ids.sort();
    let n = train_ids.len();
    let keep = n.saturating_sub(val_sessions.min(n - 1));
    let val = train_ids.split_off(keep);
    (train_ids, val)
}

/// Per-task evaluation of a model over a window set.
pub fn evaluate_model(
    model: &M3ptModel,
    windows: &[WindowTokens],
) -> Result<BTreeMap<Task, MetricsEntry>> {
    let mut preds: BTreeMap<Task, Vec<bool>> = BTreeMap::new();
    let mut labels: BTreeMap<Task, Vec<bool>> = BTreeMap::new();
    for w in windows {
        let out = model.predict(w)?;
        for task in Task::ALL {
            if let Some(logits) = out.logits(task) {
                preds
                    .entry(task)
                    .or_default()
                    .extend(logits_to_predictions(logits).iter().copied());
                labels.entry(task).or_default().extend(
                    match task {
                        Task::Speaking => &w.speaking,
                        Task::Bite => &w.biting,
                    }
                    .iter()
                    .copied(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    for (task, p) in preds {
        let entry = metrics(&confusion(&p, &labels[&task])?)?;
        if entry.degenerate {
            log::warn!("{task} metrics degenerate on this split");
        }
        out.insert(task, entry);
    }
    Ok(out)
}

/// Result of one fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldRun {
    pub fold_id: usize,
    pub test_sessions: Vec<String>,
    pub metrics: BTreeMap<Task, MetricsEntry>,
    pub tokenizer_reports: Vec<(String, TrainReport)>,
    pub train_report: ModelTrainReport,
    pub audit: PhaseAudit,
}

/// Runs one fold on in-memory sessions. Tokenizers and the transformer see
/// training sessions only; the held-out session is touched exclusively in
/// the eval phase, as the audit records.
pub fn run_fold(
    sessions: &BTreeMap<String, SessionTimeline>,
    fold: &FoldSplit,
    config: &ExperimentConfig,
) -> Result<FoldRun> {
    let (run, _, _) = run_fold_with_model(sessions, fold, config)?;
    Ok(run)
}

/// [`run_fold`] that also hands back the trained model and tokenizers.
pub fn run_fold_with_model(
    sessions: &BTreeMap<String, SessionTimeline>,
    fold: &FoldSplit,
    config: &ExperimentConfig,
) -> Result<(FoldRun, M3ptModel, TokenizerBank)> {
    let mut audit = PhaseAudit::default();
    let get = |id: &String| {
        sessions
            .get(id)
            .ok_or_else(|| Error::config(format!("fold references unknown session `{id}`")))
    };
    let (fit_ids, val_ids) = split_validation_sessions(fold.train.clone(), config.val_sessions);
    let fit_sessions: Vec<&SessionTimeline> = fit_ids.iter().map(get).collect::<Result<_>>()?;
    let val_sessions: Vec<&SessionTimeline> = val_ids.iter().map(get).collect::<Result<_>>()?;
    let test_sessions: Vec<&SessionTimeline> = fold.test.iter().map(get).collect::<Result<_>>()?;

    audit.record("tokenizer-train", fit_ids.clone());
    let train_grids = windows_restricted(&fit_sessions, config)?;
    if train_grids.is_empty() {
        return Err(Error::config("fold training split produced no windows"));
    }
    let (bank, tokenizer_reports) = train_tokenizer_bank(&train_grids, config)?;

    audit.record("model-train", fit_ids.clone());
    audit.record("model-validation", val_ids.clone());
    let train_windows = tokenize_windows(&train_grids, &bank)?;
    let val_grids = windows_restricted(&val_sessions, config)?;
    let val_windows = tokenize_windows(&val_grids, &bank)?;
    let num_persons = fit_sessions[0].num_persons();
    let model_config = config.model_config(num_persons, &bank);
    let mut settings = config.model_train;
    settings.seed = settings.seed.wrapping_add(fold.fold_id as u64);
    let (model, train_report) = train_model(model_config, &train_windows, &val_windows, &settings)?;

    audit.record("eval", fold.test.clone());
    let test_grids = windows_restricted(&test_sessions, config)?;
    let test_windows = tokenize_windows(&test_grids, &bank)?;
    if test_windows.is_empty() {
        return Err(Error::config("fold test split produced no windows"));
    }
    let metrics = evaluate_model(&model, &test_windows)?;

    Ok((
        FoldRun {
            fold_id: fold.fold_id,
            test_sessions: fold.test.clone(),
            metrics,
            tokenizer_reports,
            train_report,
            audit,
        },
        model,
        bank,
    ))
}

/// Runs one fold from an on-disk dataset, recording the files each phase
/// opened.
pub fn run_fold_from_manifest(
    manifest: &DatasetManifest,
    fold: &FoldSplit,
    config: &ExperimentConfig,
) -> Result<(FoldRun, M3ptModel, TokenizerBank)> {
    let mut audit = PhaseAudit::default();
    let file_list = |ids: &[String]| -> Vec<String> {
        ids.iter()
            .map(|id| manifest.session_dir(id).display().to_string())
            .collect()
    };
    let (fit_ids, val_ids) = split_validation_sessions(fold.train.clone(), config.val_sessions);

    // training phases read train-session files only
    audit.record("tokenizer-train:files", file_list(&fit_ids));
    let mut fit_sessions = Vec::new();
    for id in &fit_ids {
        fit_sessions.push(crate::data::load_session(manifest, id)?);
    }
    let fit_refs: Vec<&SessionTimeline> = fit_sessions.iter().collect();
    let train_grids = windows_restricted(&fit_refs, config)?;
    let (bank, tokenizer_reports) = train_tokenizer_bank(&train_grids, config)?;

    audit.record("model-train:files", file_list(&fit_ids));
    audit.record("model-validation:files", file_list(&val_ids));
    let train_windows = tokenize_windows(&train_grids, &bank)?;
    let mut val_sessions = Vec::new();
    for id in &val_ids {
        val_sessions.push(crate::data::load_session(manifest, id)?);
    }
    let val_refs: Vec<&SessionTimeline> = val_sessions.iter().collect();
    let val_grids = windows_restricted(&val_refs, config)?;
    let val_windows = tokenize_windows(&val_grids, &bank)?;
    let num_persons = fit_refs[0].num_persons();
    let model_config = config.model_config(num_persons, &bank);
    let mut settings = config.model_train;
    settings.seed = settings.seed.wrapping_add(fold.fold_id as u64);
    let (model, train_report) = train_model(model_config, &train_windows, &val_windows, &settings)?;

    // only now do test files get read
    audit.record("eval:files", file_list(&fold.test));
    let mut test_sessions = Vec::new();
    for id in &fold.test {
        test_sessions.push(crate::data::load_session(manifest, id)?);
    }
    let test_refs: Vec<&SessionTimeline> = test_sessions.iter().collect();
    let test_grids = windows_restricted(&test_refs, config)?;
    let test_windows = tokenize_windows(&test_grids, &bank)?;
    let metrics = evaluate_model(&model, &test_windows)?;

    Ok((
        FoldRun {
            fold_id: fold.fold_id,
            test_sessions: fold.test.clone(),
            metrics,
            tokenizer_reports,
            train_report,
            audit,
        },
        model,
        bank,
    ))
}

/// Aggregates fold runs per task into the reporting structure.
pub fn aggregate_folds(runs: &[FoldRun]) -> Result<BTreeMap<Task, MetricsReport>> {
    if runs.is_empty() {
        return Err(Error::config("aggregate_folds: no successful folds"));
    }
    let mut out = BTreeMap::new();
    for task in Task::ALL {
        let entries: Vec<MetricsEntry> = runs
            .iter()
            .filter_map(|r| r.metrics.get(&task).copied())
            .collect();
        if !entries.is_empty() {
            out.insert(task, aggregate(&entries)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, make_folds, CouplingConfig, SyntheticConfig};

    fn micro_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::smoke();
        config.hidden_dim = 16;
        config.num_heads = 2;
        config.num_layers = 1;
        config.vq_train.epochs = 1;
        config.model_train.steps = 6;
        config.model_train.batch_windows = 2;
        config.model_train.eval_every = 6;
        config.model_train.patience = 0;
        config.model_train.min_steps = 0;
        config
    }

    fn micro_sessions(coupling: CouplingConfig) -> BTreeMap<String, SessionTimeline> {
        let synth = SyntheticConfig {
            num_sessions: 3,
            duration_s: 54.0,
            coupling,
            ..SyntheticConfig::smoke()
        };
        generate_synthetic(&synth)
            .unwrap()
            .into_iter()
            .map(|s| (s.timeline.session_id.clone(), s.timeline))
            .collect()
    }

    #[test]
    fn fold_runs_are_deterministic() {
        let sessions = micro_sessions(CouplingConfig::concurrent_only());
        let ids: Vec<String> = sessions.keys().cloned().collect();
        let fold = &make_folds(&ids, 1, 0).unwrap()[0];
        let config = micro_config();
        let a = run_fold(&sessions, fold, &config).unwrap();
        let b = run_fold(&sessions, fold, &config).unwrap();
        assert_eq!(a.metrics, b.metrics, "identical seeds and data, identical metrics");
    }

    #[test]
    fn zero_bite_test_session_is_flagged_degenerate() {
        // bites never fire anywhere
        let coupling = CouplingConfig {
            c_silent_others: 0.0,
            d_own_silence: 0.0,
            bite_bias: -60.0,
            ..CouplingConfig::concurrent_only()
        };
        let sessions = micro_sessions(coupling);
        let ids: Vec<String> = sessions.keys().cloned().collect();
        let fold = &make_folds(&ids, 1, 0).unwrap()[0];
        let run = run_fold(&sessions, fold, &micro_config()).unwrap();
        assert!(run.metrics[&Task::Bite].degenerate);
    }

    #[test]
    fn audit_isolates_training_from_test_sessions() {
        let sessions = micro_sessions(CouplingConfig::concurrent_only());
        let ids: Vec<String> = sessions.keys().cloned().collect();
        let fold = &make_folds(&ids, 1, 0).unwrap()[0];
        let run = run_fold(&sessions, fold, &micro_config()).unwrap();
        assert!(run.audit.training_isolated_from(&fold.test));
        // and the eval phase did touch it
        let eval_resources = run.audit.resources_for("eval");
        assert!(eval_resources.iter().any(|r| *r == &fold.test[0]));
    }

    #[test]
    fn validation_split_is_session_level() {
        let ids: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let (fit, val) = split_validation_sessions(ids.clone(), 2);
        assert_eq!(fit.len(), 3);
        assert_eq!(val.len(), 2);
        for v in &val {
            assert!(!fit.contains(v));
        }
        // never empty the training side
        let (fit, val) = split_validation_sessions(ids[..2].to_vec(), 5);
        assert_eq!(fit.len(), 1);
        assert_eq!(val.len(), 1);
    }
}
