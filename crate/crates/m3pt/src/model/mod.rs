//! The multi-party, multimodal causal transformer: token embedding over the
//! (time x person x modality) grid, blockwise-masked attention with
//! right-shifted residuals, and binary prediction heads for speaking status
//! and bite timing.

pub mod checkpoint;
pub mod embed;
pub mod train;
pub mod transformer;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{build_mask, AttentionMask, MaskKind, MaskSpec};
use crate::nn::layers::{LayerNorm, Linear};
use crate::nn::{Module, Param};
use crate::signal::{ClassWeights, ModalityKind, ModalitySet};

pub use embed::{tokenize_grid, TokenEmbedder, TokenInput, TokenizerBank, WindowTokens};
pub use train::{leakage_audit, train_model, LeakageReport, ModelTrainReport, ModelTrainSettings};
pub use transformer::{AuditOptions, AuditRecord, LayerAudit, TransformerLayer};

/// Where a token's embedding came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    VqLatent,
    DiscreteEmbedding,
    Placeholder,
}

/// Embedded window: `L x hidden` rows laid out per the mask spec.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub embeddings: Array2<f64>,
    pub provenance: Vec<Provenance>,
}

/// Which prediction heads are attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadTasks {
    pub speaking: bool,
    pub bite: bool,
}

impl HeadTasks {
    pub fn both() -> Self {
        HeadTasks {
            speaking: true,
            bite: true,
        }
    }
}

/// How the time component of the positional encoding is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeEncoding {
    /// Learned table indexed by `t mod T` (the default; supports rolling
    /// windows).
    LearnedCyclic,
    Sinusoidal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_mult: usize,
    pub spec: MaskSpec,
    pub modalities: ModalitySet,
    pub mask_kind: MaskKind,
    pub dropout: f64,
    /// Replace predicted persons' current-timestep inputs with learned
    /// placeholders (exact value-path isolation). Off by default: teacher
    /// forcing matches the evaluation protocol.
    pub placeholder_inputs: bool,
    pub head_tasks: HeadTasks,
    /// Latent dimension of the frozen tokenizer per continuous modality.
    pub latent_dims: BTreeMap<ModalityKind, usize>,
    pub time_encoding: TimeEncoding,
}

impl ModelConfig {
    /// Default architecture: 4 layers, 8 heads, hidden 256.
    pub fn new(spec: MaskSpec, modalities: ModalitySet) -> Self {
        ModelConfig {
            hidden_dim: 256,
            num_layers: 4,
            num_heads: 8,
            ff_mult: 4,
            spec,
            modalities,
            mask_kind: MaskKind::blockwise(),
            dropout: 0.1,
            placeholder_inputs: false,
            head_tasks: HeadTasks::both(),
            latent_dims: BTreeMap::new(),
            time_encoding: TimeEncoding::LearnedCyclic,
        }
    }

    /// The reduced profile used for the temporal-context ablation.
    pub fn smaller(spec: MaskSpec, modalities: ModalitySet) -> Self {
        ModelConfig {
            hidden_dim: 128,
            num_layers: 2,
            ..ModelConfig::new(spec, modalities)
        }
    }

    /// Tiny profile for smoke runs and tests.
    pub fn smoke(spec: MaskSpec, modalities: ModalitySet) -> Self {
        ModelConfig {
            hidden_dim: 48,
            num_layers: 2,
            num_heads: 4,
            ff_mult: 2,
            dropout: 0.0,
            ..ModelConfig::new(spec, modalities)
        }
    }

    pub fn with_latent_dims(mut self, tokenizers: &TokenizerBank) -> Self {
        self.latent_dims = tokenizers
            .iter()
            .map(|(k, t)| (*k, t.config.latent_dim))
            .collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.modalities.len() != self.spec.num_modalities {
            return Err(Error::config(format!(
                "modality set has {} entries, mask spec expects {}",
                self.modalities.len(),
                self.spec.num_modalities
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        for m in self.modalities.iter() {
            if !m.is_discrete && !self.latent_dims.contains_key(&m.kind) {
                return Err(Error::config(format!(
                    "continuous modality {} has no recorded tokenizer latent dim",
                    m.kind
                )));
            }
        }
        if self.head_tasks.speaking || self.head_tasks.bite {
            self.head_source(ModalityKind::Speaker)?;
            self.head_source(ModalityKind::Bite)?;
        }
        Ok(())
    }

    /// Readout slot for a head: the matching modality's position when
    /// present, otherwise the other discrete head-source modality. Dropping
    /// both speaker and bite tokens leaves the heads nothing to read.
    pub fn head_source(&self, preferred: ModalityKind) -> Result<usize> {
        let fallback = if preferred == ModalityKind::Speaker {
            ModalityKind::Bite
        } else {
            ModalityKind::Speaker
        };
        self.modalities
            .index_of(preferred)
            .or_else(|| self.modalities.index_of(fallback))
            .ok_or_else(|| {
                Error::config(
                    "both speaker and bite modalities are absent; the prediction heads have no \
                     readout position",
                )
            })
    }
}

/// One logit per (segment, person) per enabled task.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub speaking_logits: Option<Array2<f64>>,
    pub bite_logits: Option<Array2<f64>>,
}

impl HeadOutputs {
    pub fn logits(&self, task: Task) -> Option<&Array2<f64>> {
        match task {
            Task::Speaking => self.speaking_logits.as_ref(),
            Task::Bite => self.bite_logits.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Speaking,
    Bite,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Speaking, Task::Bite];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Speaking => "speaking",
            Task::Bite => "bite",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Class weights per task, as produced by
/// [`crate::signal::class_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights {
    pub speaking: ClassWeights,
    pub bite: ClassWeights,
}

impl TaskWeights {
    pub fn unit() -> Self {
        TaskWeights {
            speaking: ClassWeights::unit(),
            bite: ClassWeights::unit(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLoss {
    pub total: f64,
    pub speaking: Option<f64>,
    pub bite: Option<f64>,
}

fn bce_with_logits(logit: f64, label: bool) -> f64 {
    // softplus(logit) - label * logit, computed stably
    let z = logit;
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - if label { z } else { 0.0 }
}

fn weighted_bce(
    logits: &Array2<f64>,
    labels: &Array2<bool>,
    weights: &ClassWeights,
) -> Result<(f64, Array2<f64>)> {
    if logits.raw_dim() != labels.raw_dim() {
        return Err(Error::shape(format!(
            "logits {:?} vs labels {:?}",
            logits.shape(),
            labels.shape()
        )));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((idx, &z), &y) in logits.indexed_iter().zip(labels.iter()) {
        let w = weights.for_label(y);
        total += w * bce_with_logits(z, y);
        let sigma = 1.0 / (1.0 + (-z).exp());
        grad[idx] = w * (sigma - if y { 1.0 } else { 0.0 }) / n;
    }
    Ok((total / n, grad))
}

/// Class-weighted binary cross-entropy, averaged over the (segment, person)
/// grid and summed over enabled tasks.
pub fn task_loss(
    outputs: &HeadOutputs,
    speaking_labels: &Array2<bool>,
    biting_labels: &Array2<bool>,
    weights: &TaskWeights,
) -> Result<TaskLoss> {
    let (loss, _) = task_loss_with_grads(outputs, speaking_labels, biting_labels, weights)?;
    Ok(loss)
}

pub(crate) fn task_loss_with_grads(
    outputs: &HeadOutputs,
    speaking_labels: &Array2<bool>,
    biting_labels: &Array2<bool>,
    weights: &TaskWeights,
) -> Result<(TaskLoss, HeadOutputs)> {
    let mut total = 0.0;
    let mut speaking = None;
    let mut bite = None;
    let mut g_speaking = None;
    let mut g_bite = None;
    if let Some(logits) = &outputs.speaking_logits {
        let (l, g) = weighted_bce(logits, speaking_labels, &weights.speaking)?;
        total += l;
        speaking = Some(l);
        g_speaking = Some(g);
    }
    if let Some(logits) = &outputs.bite_logits {
        let (l, g) = weighted_bce(logits, biting_labels, &weights.bite)?;
        total += l;
        bite = Some(l);
        g_bite = Some(g);
    }
    Ok((
        TaskLoss {
            total,
            speaking,
            bite,
        },
        HeadOutputs {
            speaking_logits: g_speaking,
            bite_logits: g_bite,
        },
    ))
}

/// The assembled model. Parameters are immutable during `predict`-style
/// calls (`&self`), so evaluation can share one model across threads;
/// training goes through `&mut self`.
#[derive(Debug, Clone)]
pub struct M3ptModel {
    pub config: ModelConfig,
    pub mask: AttentionMask,
    embedder: TokenEmbedder,
    layers: Vec<TransformerLayer>,
    final_norm: LayerNorm,
    speaking_head: Option<Linear>,
    bite_head: Option<Linear>,
    predict_all: Array2<bool>,
}

impl M3ptModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = build_mask(&config.spec, config.mask_kind)?;
        let embedder = TokenEmbedder::new(&config, &mut rng)?;
        let block_len = config.spec.block_len();
        let layers = (0..config.num_layers)
            .map(|i| {
                TransformerLayer::new(
                    &format!("layer{i}"),
                    config.hidden_dim,
                    config.num_heads,
                    config.ff_mult,
                    config.dropout,
                    block_len,
                    &mut rng,
                )
            })
            .collect();
        let final_norm = LayerNorm::new("final_norm", config.hidden_dim);
        let speaking_head = config
            .head_tasks
            .speaking
            .then(|| Linear::new("head.speaking", config.hidden_dim, 1, &mut rng));
        let bite_head = config
            .head_tasks
            .bite
            .then(|| Linear::new("head.bite", config.hidden_dim, 1, &mut rng));
        let predict_all =
            Array2::from_elem((config.spec.num_segments, config.spec.num_persons), true);
        Ok(M3ptModel {
            config,
            mask,
            embedder,
            layers,
            final_norm,
            speaking_head,
            bite_head,
            predict_all,
        })
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.config.spec
    }

    /// Embeds a window without touching training caches; all (t, i) pairs
    /// count as predicted.
    pub fn embed_tokens(&self, tokens: &WindowTokens) -> Result<TokenSequence> {
        self.embedder
            .embed(tokens, self.config.placeholder_inputs, &self.predict_all)
    }

    pub fn embed_tokens_for(
        &self,
        tokens: &WindowTokens,
        predict: &Array2<bool>,
    ) -> Result<TokenSequence> {
        self.embedder
            .embed(tokens, self.config.placeholder_inputs, predict)
    }

    fn predict_set(&self, target: Option<(usize, usize)>) -> Array2<bool> {
        match target {
            None => self.predict_all.clone(),
            Some((t, person)) => {
                let mut set = Array2::from_elem(self.predict_all.raw_dim(), false);
                set[(t, person)] = true;
                set
            }
        }
    }

    fn head_rows(&self, preferred: ModalityKind) -> (Vec<usize>, usize) {
        let slot = self.config.head_source(preferred).expect("validated");
        let spec = &self.config.spec;
        let mut rows = Vec::with_capacity(spec.num_segments * spec.num_persons);
        for t in 0..spec.num_segments {
            for person in 0..spec.num_persons {
                rows.push(spec.position(crate::mask::TokenCoord {
                    t,
                    person,
                    modality: slot,
                }));
            }
        }
        (rows, slot)
    }

    fn read_head(
        &self,
        head: &Linear,
        hidden: &Array2<f64>,
        preferred: ModalityKind,
    ) -> Array2<f64> {
        let spec = &self.config.spec;
        let (rows, _) = self.head_rows(preferred);
        let mut gathered = Array2::zeros((rows.len(), self.config.hidden_dim));
        for (r, &pos) in rows.iter().enumerate() {
            gathered.row_mut(r).assign(&hidden.row(pos));
        }
        let logits = head.apply(&gathered);
        Array2::from_shape_fn((spec.num_segments, spec.num_persons), |(t, p)| {
            logits[(t * spec.num_persons + p, 0)]
        })
    }

    /// Hidden states for a token sequence, inference mode.
    pub fn forward_hidden(&self, seq: &TokenSequence) -> Result<Array2<f64>> {
        self.forward_hidden_audit(seq, &AuditOptions::default())
            .map(|(h, _)| h)
    }

    /// Inference forward with audit capture.
    pub fn forward_hidden_audit(
        &self,
        seq: &TokenSequence,
        opts: &AuditOptions,
    ) -> Result<(Array2<f64>, AuditRecord)> {
        if seq.embeddings.nrows() != self.config.spec.len() {
            return Err(Error::shape(format!(
                "sequence length {} != layout length {}",
                seq.embeddings.nrows(),
                self.config.spec.len()
            )));
        }
        let mut record = AuditRecord::default();
        let mut h = seq.embeddings.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h, &self.mask, opts, Some(&mut record));
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite activations after layer {i}"
                )));
            }
        }
        Ok((self.final_norm.apply(&h), record))
    }

    /// Reads the prediction heads from hidden states.
    pub fn predict_heads(&self, hidden: &Array2<f64>) -> Result<HeadOutputs> {
        if hidden.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("predict_heads: non-finite hidden states"));
        }
        Ok(HeadOutputs {
            speaking_logits: self
                .speaking_head
                .as_ref()
                .map(|head| self.read_head(head, hidden, ModalityKind::Speaker)),
            bite_logits: self
                .bite_head
                .as_ref()
                .map(|head| self.read_head(head, hidden, ModalityKind::Bite)),
        })
    }

    /// Full inference: tokens to logits.
    ///
    /// Teacher-forced mode is a single pass over the window. In placeholder
    /// mode each (t, i) pair gets its own pass in which only that pair's
    /// inputs are replaced — everything it may legitimately condition on
    /// (its own past and others' past-and-present) stays real, and the pair
    /// being predicted contributes nothing, not even through the attention
    /// query path.
    pub fn predict(&self, tokens: &WindowTokens) -> Result<HeadOutputs> {
        if !self.config.placeholder_inputs {
            let seq = self.embed_tokens(tokens)?;
            let hidden = self.forward_hidden(&seq)?;
            return self.predict_heads(&hidden);
        }
        let spec = self.config.spec;
        let mut speaking = self
            .config
            .head_tasks
            .speaking
            .then(|| Array2::zeros((spec.num_segments, spec.num_persons)));
        let mut bite = self
            .config
            .head_tasks
            .bite
            .then(|| Array2::zeros((spec.num_segments, spec.num_persons)));
        for t in 0..spec.num_segments {
            for person in 0..spec.num_persons {
                let predict = self.predict_set(Some((t, person)));
                let seq = self.embed_tokens_for(tokens, &predict)?;
                let hidden = self.forward_hidden(&seq)?;
                let out = self.predict_heads(&hidden)?;
                if let (Some(acc), Some(l)) = (speaking.as_mut(), out.speaking_logits.as_ref()) {
                    acc[(t, person)] = l[(t, person)];
                }
                if let (Some(acc), Some(l)) = (bite.as_mut(), out.bite_logits.as_ref()) {
                    acc[(t, person)] = l[(t, person)];
                }
            }
        }
        Ok(HeadOutputs {
            speaking_logits: speaking,
            bite_logits: bite,
        })
    }

    /// Inference with audit capture, for the verification suites.
    pub fn predict_with_audit(
        &self,
        tokens: &WindowTokens,
        opts: &AuditOptions,
    ) -> Result<(HeadOutputs, AuditRecord)> {
        let seq = self.embed_tokens(tokens)?;
        let (hidden, record) = self.forward_hidden_audit(&seq, opts)?;
        Ok((self.predict_heads(&hidden)?, record))
    }

    /// One training forward+backward on a single window, accumulating
    /// gradients scaled by `grad_scale` (use `1 / batch_size` when
    /// accumulating over a batch). Returns the unscaled loss.
    ///
    /// `target` restricts both the placeholder substitution and the loss to
    /// one (t, i) pair — the training-side counterpart of per-pair
    /// prediction in placeholder mode.
    pub fn accumulate_window(
        &mut self,
        tokens: &WindowTokens,
        weights: &TaskWeights,
        grad_scale: f64,
        target: Option<(usize, usize)>,
    ) -> Result<TaskLoss> {
        let predict = self.predict_set(target);
        let seq = self
            .embedder
            .forward(tokens, self.config.placeholder_inputs, &predict)?;
        let mut h = seq.embeddings.clone();
        for layer in self.layers.iter_mut() {
            h = layer.forward(&h, &self.mask);
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite activations in training forward"));
        }
        let hidden = self.final_norm.forward(&h);

        // heads forward (cached for backward)
        let spec = self.config.spec;
        let mut outputs = HeadOutputs {
            speaking_logits: None,
            bite_logits: None,
        };
        let mut speaking_rows = Vec::new();
        let mut bite_rows = Vec::new();
        if self.speaking_head.is_some() {
            let (rows, _) = self.head_rows(ModalityKind::Speaker);
            let mut gathered = Array2::zeros((rows.len(), self.config.hidden_dim));
            for (r, &pos) in rows.iter().enumerate() {
                gathered.row_mut(r).assign(&hidden.row(pos));
            }
            let logits = self.speaking_head.as_mut().unwrap().forward(&gathered);
            outputs.speaking_logits = Some(Array2::from_shape_fn(
                (spec.num_segments, spec.num_persons),
                |(t, p)| logits[(t * spec.num_persons + p, 0)],
            ));
            speaking_rows = rows;
        }
        if self.bite_head.is_some() {
            let (rows, _) = self.head_rows(ModalityKind::Bite);
            let mut gathered = Array2::zeros((rows.len(), self.config.hidden_dim));
            for (r, &pos) in rows.iter().enumerate() {
                gathered.row_mut(r).assign(&hidden.row(pos));
            }
            let logits = self.bite_head.as_mut().unwrap().forward(&gathered);
            outputs.bite_logits = Some(Array2::from_shape_fn(
                (spec.num_segments, spec.num_persons),
                |(t, p)| logits[(t * spec.num_persons + p, 0)],
            ));
            bite_rows = rows;
        }

        let (loss, grads) = match target {
            None => task_loss_with_grads(&outputs, &tokens.speaking, &tokens.biting, weights)?,
            Some((tt, ii)) => {
                // loss and gradient restricted to the target pair
                let pick = |a: &Array2<bool>| Array2::from_elem((1, 1), a[(tt, ii)]);
                let narrow = HeadOutputs {
                    speaking_logits: outputs
                        .speaking_logits
                        .as_ref()
                        .map(|l| Array2::from_elem((1, 1), l[(tt, ii)])),
                    bite_logits: outputs
                        .bite_logits
                        .as_ref()
                        .map(|l| Array2::from_elem((1, 1), l[(tt, ii)])),
                };
                let (loss, small) = task_loss_with_grads(
                    &narrow,
                    &pick(&tokens.speaking),
                    &pick(&tokens.biting),
                    weights,
                )?;
                let spread = |g: Option<Array2<f64>>| {
                    g.map(|g1| {
                        let mut full = Array2::zeros((
                            self.config.spec.num_segments,
                            self.config.spec.num_persons,
                        ));
                        full[(tt, ii)] = g1[(0, 0)];
                        full
                    })
                };
                (
                    loss,
                    HeadOutputs {
                        speaking_logits: spread(small.speaking_logits),
                        bite_logits: spread(small.bite_logits),
                    },
                )
            }
        };
        if !loss.total.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite training loss {}",
                loss.total
            )));
        }

        // backward: heads -> hidden
        let mut g_hidden = Array2::zeros(hidden.raw_dim());
        if let (Some(head), Some(glogits)) =
            (self.speaking_head.as_mut(), grads.speaking_logits.as_ref())
        {
            let flat = Array2::from_shape_fn((speaking_rows.len(), 1), |(r, _)| {
                glogits[(r / spec.num_persons, r % spec.num_persons)] * grad_scale
            });
            let g_gathered = head.backward(&flat);
            for (r, &pos) in speaking_rows.iter().enumerate() {
                let mut row = g_hidden.row_mut(pos);
                row += &g_gathered.row(r);
            }
        }
        if let (Some(head), Some(glogits)) = (self.bite_head.as_mut(), grads.bite_logits.as_ref())
        {
            let flat = Array2::from_shape_fn((bite_rows.len(), 1), |(r, _)| {
                glogits[(r / spec.num_persons, r % spec.num_persons)] * grad_scale
            });
            let g_gathered = head.backward(&flat);
            for (r, &pos) in bite_rows.iter().enumerate() {
                let mut row = g_hidden.row_mut(pos);
                row += &g_gathered.row(r);
            }
        }

        let mut g = self.final_norm.backward(&g_hidden);
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g, &self.mask);
        }
        self.embedder.backward(&g);
        Ok(loss)
    }
}

impl Module for M3ptModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.embedder.visit_params(f);
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
        self.final_norm.visit_params(f);
        if let Some(h) = &mut self.speaking_head {
            h.visit_params(f);
        }
        if let Some(h) = &mut self.bite_head {
            h.visit_params(f);
        }
    }
}

/// Right-shift features one timestep block (block 0 zeroed); standalone
/// form of the residual transform for direct inspection.
pub fn right_shift_residual(features: &Array2<f64>, spec: &MaskSpec) -> Result<Array2<f64>> {
    if features.nrows() != spec.len() {
        return Err(Error::shape(format!(
            "features have {} rows, layout expects {}",
            features.nrows(),
            spec.len()
        )));
    }
    Ok(crate::nn::layers::right_shift_blocks(
        features,
        spec.block_len(),
    ))
}

/// Convenience: logits thresholded at 0 (probability one-half).
pub fn logits_to_predictions(logits: &Array2<f64>) -> Array2<bool> {
    logits.mapv(|z| z > 0.0)
}

/// Uniform-random window inputs for audits and property tests: latents are
/// standard normal, flags are fair coins.
pub fn random_window_tokens(
    config: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> WindowTokens {
    use rand::Rng;
    let spec = &config.spec;
    let mut inputs = Vec::with_capacity(spec.len());
    for pos in 0..spec.len() {
        let coord = spec.coord(pos);
        let modality = config.modalities.at(coord.modality);
        if modality.is_discrete {
            inputs.push(TokenInput::Flag(rng.random::<f64>() < 0.5));
        } else {
            let d = config.latent_dims[&modality.kind];
            inputs.push(TokenInput::Latent(Array1::from_shape_fn(d, |_| {
                rng.random_range(-1.0..1.0)
            })));
        }
    }
    let speaking = Array2::from_shape_fn((spec.num_segments, spec.num_persons), |_| {
        rng.random::<f64>() < 0.5
    });
    let biting = Array2::from_shape_fn((spec.num_segments, spec.num_persons), |_| {
        rng.random::<f64>() < 0.5
    });
    WindowTokens {
        window_id: "random".into(),
        session_id: "random".into(),
        inputs,
        speaking,
        biting,
    }
}
