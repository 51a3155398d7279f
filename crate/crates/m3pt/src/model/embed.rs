//! Token embedding: frozen VQ latents and discrete flags into the
//! transformer's hidden space, plus positional encodings and placeholder
//! substitution.
//!
//! Per token (t, i, k): continuous segments arrive as the frozen tokenizer's
//! aggregated latent and are lifted by a per-modality linear map; discrete
//! segments index a two-entry embedding table; when placeholder inputs are
//! enabled, tokens of predicted (t, i) pairs are swapped for a learned
//! per-modality placeholder *before* positional encodings are added, so the
//! embedded sequence is independent of those raw signals by construction.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Provenance, TimeEncoding, TokenSequence};
use crate::error::{Error, Result};
use crate::mask::TokenCoord;
use crate::nn::layers::Linear;
use crate::nn::{view2, Module, Param};
use crate::signal::{ModalityKind, SegmentData, SegmentGrid};
use crate::vq::VqTokenizer;

/// Raw per-position token inputs for one window, after frozen tokenization
/// but before any trainable embedding.
#[derive(Debug, Clone)]
pub enum TokenInput {
    /// Aggregated VQ latent of a continuous segment.
    Latent(Array1<f64>),
    /// Binary state of a discrete segment.
    Flag(bool),
}

/// One window, tokenized and ready for embedding; carries its labels.
#[derive(Debug, Clone)]
pub struct WindowTokens {
    pub window_id: String,
    pub session_id: String,
    /// Layout order: `t * (P * M) + person * M + modality`.
    pub inputs: Vec<TokenInput>,
    pub speaking: Array2<bool>,
    pub biting: Array2<bool>,
}

/// Frozen tokenizers keyed by modality.
pub type TokenizerBank = std::collections::BTreeMap<ModalityKind, VqTokenizer>;

/// Runs every continuous segment of a grid through its frozen tokenizer and
/// collects discrete flags, producing the transformer's raw token inputs.
pub fn tokenize_grid(grid: &SegmentGrid, tokenizers: &TokenizerBank) -> Result<WindowTokens> {
    let (t_count, p_count, m_count) = (
        grid.num_segments,
        grid.num_persons,
        grid.modalities.len(),
    );
    let mut inputs = Vec::with_capacity(t_count * p_count * m_count);
    for t in 0..t_count {
        for person in 0..p_count {
            for m_idx in 0..m_count {
                let modality = grid.modalities.at(m_idx);
                match grid.segment(t, person, m_idx) {
                    SegmentData::Continuous(chunk) => {
                        let tok = tokenizers.get(&modality.kind).ok_or_else(|| {
                            Error::config(format!(
                                "no tokenizer for continuous modality {}",
                                modality.kind
                            ))
                        })?;
                        let latent = tok.encode_segment(chunk)?;
                        inputs.push(TokenInput::Latent(latent.z));
                    }
                    SegmentData::Discrete(flag) => inputs.push(TokenInput::Flag(*flag)),
                }
            }
        }
    }
    Ok(WindowTokens {
        window_id: grid.window_id.clone(),
        session_id: grid.session_id.clone(),
        inputs,
        speaking: grid.speaking.clone(),
        biting: grid.biting.clone(),
    })
}

/// Learned embedding machinery. All tables are trainable; the VQ latents
/// feeding the lifts are constants from frozen tokenizers.
#[derive(Debug, Clone)]
pub struct TokenEmbedder {
    /// One lift per continuous modality, `None` for discrete slots.
    lifts: Vec<Option<Linear>>,
    /// Two-entry tables for discrete slots, `None` for continuous.
    tables: Vec<Option<Param>>,
    placeholders: Vec<Param>,
    time_table: Option<Param>,
    person_table: Param,
    modality_table: Param,
    time_encoding: TimeEncoding,
    spec: crate::mask::MaskSpec,
    hidden: usize,
    cache: Option<EmbedCache>,
}

#[derive(Debug, Clone)]
struct EmbedCache {
    provenance: Vec<Provenance>,
    flags: Vec<Option<bool>>,
}

fn sinusoidal_row(t: usize, hidden: usize) -> Array1<f64> {
    Array1::from_shape_fn(hidden, |j| {
        let pair = (j / 2) as f64;
        let rate = 1.0 / 10_000f64.powf(2.0 * pair / hidden as f64);
        let angle = t as f64 * rate;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl TokenEmbedder {
    pub fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let hidden = config.hidden_dim;
        let mut lifts = Vec::new();
        let mut tables = Vec::new();
        let mut placeholders = Vec::new();
        for modality in config.modalities.iter() {
            let name = modality.kind.name();
            if modality.is_discrete {
                lifts.push(None);
                tables.push(Some(Param::normal(
                    format!("embed.table.{name}"),
                    &[2, hidden],
                    0.02,
                    rng,
                )));
            } else {
                let latent = *config.latent_dims.get(&modality.kind).ok_or_else(|| {
                    Error::config(format!("no latent dim recorded for modality {name}"))
                })?;
                lifts.push(Some(Linear::new(
                    &format!("embed.lift.{name}"),
                    latent,
                    hidden,
                    rng,
                )));
                tables.push(None);
            }
            placeholders.push(Param::normal(
                format!("embed.placeholder.{name}"),
                &[hidden],
                0.02,
                rng,
            ));
        }
        let time_table = match config.time_encoding {
            TimeEncoding::LearnedCyclic => Some(Param::normal(
                "embed.pos.time",
                &[config.spec.num_segments, hidden],
                0.02,
                rng,
            )),
            TimeEncoding::Sinusoidal => None,
        };
        Ok(TokenEmbedder {
            lifts,
            tables,
            placeholders,
            time_table,
            person_table: Param::normal(
                "embed.pos.person",
                &[config.spec.num_persons, hidden],
                0.02,
                rng,
            ),
            modality_table: Param::normal(
                "embed.pos.modality",
                &[config.spec.num_modalities, hidden],
                0.02,
                rng,
            ),
            time_encoding: config.time_encoding,
            spec: config.spec,
            hidden,
            cache: None,
        })
    }

    fn base_embedding(
        &self,
        coord: TokenCoord,
        input: &TokenInput,
        placeholder: bool,
    ) -> Result<(Array1<f64>, Provenance)> {
        let k = coord.modality;
        if placeholder {
            return Ok((
                crate::nn::view1(&self.placeholders[k].value).to_owned(),
                Provenance::Placeholder,
            ));
        }
        match input {
            TokenInput::Latent(z) => {
                let lift = self.lifts[k].as_ref().ok_or_else(|| {
                    Error::config(format!(
                        "latent input at modality slot {k}, which is discrete in the model config"
                    ))
                })?;
                if z.len() != lift.in_dim() {
                    return Err(Error::shape(format!(
                        "latent dim {} does not match lift input {} at slot {k}",
                        z.len(),
                        lift.in_dim()
                    )));
                }
                let row = z.view().into_shape_with_order((1, z.len())).expect("row");
                let lifted = lift.apply(&row.to_owned());
                Ok((
                    lifted.index_axis(ndarray::Axis(0), 0).to_owned(),
                    Provenance::VqLatent,
                ))
            }
            TokenInput::Flag(b) => {
                let table = self.tables[k].as_ref().ok_or_else(|| {
                    Error::config(format!(
                        "discrete input at modality slot {k}, which is continuous in the model config"
                    ))
                })?;
                let row = view2(&table.value).row(usize::from(*b)).to_owned();
                Ok((row, Provenance::DiscreteEmbedding))
            }
        }
    }

    fn positional(&self, coord: TokenCoord) -> Array1<f64> {
        let t_enc = match (&self.time_table, self.time_encoding) {
            (Some(table), _) => view2(&table.value)
                .row(coord.t % self.spec.num_segments)
                .to_owned(),
            (None, TimeEncoding::Sinusoidal) => sinusoidal_row(coord.t, self.hidden),
            (None, TimeEncoding::LearnedCyclic) => unreachable!("table exists for learned mode"),
        };
        let persons = view2(&self.person_table.value);
        let modalities = view2(&self.modality_table.value);
        t_enc + &persons.row(coord.person) + &modalities.row(coord.modality)
    }

    /// Embeds a window. `predict` marks the (t, i) pairs being predicted;
    /// their positions become placeholders when `placeholder_inputs` is set.
    pub fn forward(
        &mut self,
        tokens: &WindowTokens,
        placeholder_inputs: bool,
        predict: &Array2<bool>,
    ) -> Result<TokenSequence> {
        let seq = self.embed(tokens, placeholder_inputs, predict)?;
        self.cache = Some(EmbedCache {
            provenance: seq.provenance.clone(),
            flags: tokens
                .inputs
                .iter()
                .map(|i| match i {
                    TokenInput::Flag(b) => Some(*b),
                    TokenInput::Latent(_) => None,
                })
                .collect(),
        });
        // lifts were applied with `apply`; rerun them caching for backward
        let l = self.spec.len();
        for k in 0..self.spec.num_modalities {
            if self.lifts[k].is_none() {
                continue;
            }
            let rows: Vec<usize> = (0..l)
                .filter(|&pos| {
                    self.spec.coord(pos).modality == k
                        && seq.provenance[pos] == Provenance::VqLatent
                })
                .collect();
            if rows.is_empty() {
                continue;
            }
            let lift = self.lifts[k].as_mut().unwrap();
            let mut stacked = Array2::zeros((rows.len(), lift.in_dim()));
            for (r, &pos) in rows.iter().enumerate() {
                if let TokenInput::Latent(z) = &tokens.inputs[pos] {
                    stacked.row_mut(r).assign(z);
                }
            }
            let _ = lift.forward(&stacked);
        }
        Ok(seq)
    }

    /// Inference-mode embedding; no caches touched, safe on `&self`.
    pub fn embed(
        &self,
        tokens: &WindowTokens,
        placeholder_inputs: bool,
        predict: &Array2<bool>,
    ) -> Result<TokenSequence> {
        let l = self.spec.len();
        if tokens.inputs.len() != l {
            return Err(Error::shape(format!(
                "window has {} token inputs, layout expects {l}",
                tokens.inputs.len()
            )));
        }
        let mut embeddings = Array2::zeros((l, self.hidden));
        let mut provenance = Vec::with_capacity(l);
        for pos in 0..l {
            let coord = self.spec.coord(pos);
            let use_placeholder = placeholder_inputs && predict[(coord.t, coord.person)];
            let (base, prov) = self.base_embedding(coord, &tokens.inputs[pos], use_placeholder)?;
            let emb = base + self.positional(coord);
            embeddings.row_mut(pos).assign(&emb);
            provenance.push(prov);
        }
        Ok(TokenSequence {
            embeddings,
            provenance,
        })
    }

    /// Routes the sequence gradient into lifts, tables, placeholders, and
    /// positional tables. Must follow a `forward` call on the same window.
    pub fn backward(&mut self, g: &Array2<f64>) {
        let cache = self.cache.take().expect("forward before backward");
        let l = self.spec.len();

        // per-modality lift gradients, batched to mirror forward
        for k in 0..self.spec.num_modalities {
            if self.lifts[k].is_none() {
                continue;
            }
            let rows: Vec<usize> = (0..l)
                .filter(|&pos| {
                    self.spec.coord(pos).modality == k
                        && cache.provenance[pos] == Provenance::VqLatent
                })
                .collect();
            if rows.is_empty() {
                continue;
            }
            let lift = self.lifts[k].as_mut().unwrap();
            let mut stacked = Array2::zeros((rows.len(), self.hidden));
            for (r, &pos) in rows.iter().enumerate() {
                stacked.row_mut(r).assign(&g.row(pos));
            }
            let _ = lift.backward(&stacked); // input grad discarded: latents are frozen
        }

        for pos in 0..l {
            let coord = self.spec.coord(pos);
            let grow = g.row(pos);
            match cache.provenance[pos] {
                Provenance::Placeholder => {
                    let mut pg = self.placeholders[coord.modality]
                        .grad
                        .view_mut()
                        .into_dimensionality::<ndarray::Ix1>()
                        .expect("rank 1");
                    pg += &grow;
                }
                Provenance::DiscreteEmbedding => {
                    let flag = cache.flags[pos].expect("discrete slot has a flag");
                    let table = self.tables[coord.modality].as_mut().expect("table");
                    let mut tg = table
                        .grad
                        .view_mut()
                        .into_dimensionality::<ndarray::Ix2>()
                        .expect("rank 2");
                    let mut row = tg.row_mut(usize::from(flag));
                    row += &grow;
                }
                Provenance::VqLatent => {} // handled via the lift above
            }
            if let Some(table) = &mut self.time_table {
                let mut tg = table
                    .grad
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix2>()
                    .expect("rank 2");
                let mut row = tg.row_mut(coord.t % self.spec.num_segments);
                row += &grow;
            }
            {
                let mut pg = self
                    .person_table
                    .grad
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix2>()
                    .expect("rank 2");
                let mut row = pg.row_mut(coord.person);
                row += &grow;
            }
            {
                let mut mg = self
                    .modality_table
                    .grad
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix2>()
                    .expect("rank 2");
                let mut row = mg.row_mut(coord.modality);
                row += &grow;
            }
        }
    }
}

impl Module for TokenEmbedder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for lift in self.lifts.iter_mut().flatten() {
            lift.visit_params(f);
        }
        for table in self.tables.iter_mut().flatten() {
            f(table);
        }
        for p in &mut self.placeholders {
            f(p);
        }
        if let Some(t) = &mut self.time_table {
            f(t);
        }
        f(&mut self.person_table);
        f(&mut self.modality_table);
    }
}
