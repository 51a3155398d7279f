//! Per-modality vector-quantized autoencoders.
//!
//! A c-second continuous chunk (`m` frames x `channels`) is encoded
//! frame-by-frame with a 1-D CNN, each frame embedding is snapped to its
//! nearest codebook entry, and the `m` quantized embeddings are concatenated
//! and linearly projected into one segment embedding `z`. Decoding
//! up-projects `z` back to `m` embeddings, re-selects codebook entries
//! (producing the decode-side selection loss), and runs a transposed
//! convolution stack back to frames.
//!
//! The quantization step is non-differentiable; training uses the
//! straight-through estimator, substituting the identity for the
//! quantizer's Jacobian. Once trained, a tokenizer is frozen: encode and
//! decode are deterministic and take `&self`, so sharing across threads is
//! safe.

pub mod checkpoint;
pub mod train;

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Activation, Conv1d, Linear};
use crate::nn::{Module, Param};
use crate::signal::Modality;

pub use train::{straight_through_check, train_tokenizer, TrainReport, VqTrainSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub modality: Modality,
    pub latent_dim: usize,
    pub codebook_size: usize,
    pub frames_per_segment: usize,
    /// Hidden channel widths of the convolutional encoder; the decoder
    /// mirrors them in reverse.
    pub conv_channel_widths: Vec<usize>,
    pub kernel: usize,
    pub commitment_coefficient: f64,
}

impl TokenizerConfig {
    pub fn new(modality: Modality, frames_per_segment: usize) -> Self {
        TokenizerConfig {
            modality,
            latent_dim: 64,
            codebook_size: 256,
            frames_per_segment,
            conv_channel_widths: vec![32, 32],
            kernel: 3,
            commitment_coefficient: 0.25,
        }
    }

    /// Small profile for smoke runs and tests.
    pub fn smoke(modality: Modality, frames_per_segment: usize) -> Self {
        TokenizerConfig {
            modality,
            latent_dim: 8,
            codebook_size: 16,
            frames_per_segment,
            conv_channel_widths: vec![12],
            kernel: 3,
            commitment_coefficient: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality.is_discrete {
            return Err(Error::config(format!(
                "modality {} is discrete; discrete streams use embedding tables, not a tokenizer",
                self.modality.kind
            )));
        }
        if self.codebook_size < 2 {
            return Err(Error::config("codebook_size must be >= 2"));
        }
        if self.latent_dim == 0 || self.frames_per_segment == 0 {
            return Err(Error::config("latent_dim and frames_per_segment must be > 0"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("conv kernel width must be odd"));
        }
        if self.commitment_coefficient < 0.0 {
            return Err(Error::config("commitment coefficient must be >= 0"));
        }
        Ok(())
    }
}

/// Nearest-neighbor quantization table. Ties break to the lowest index, so
/// lookup is deterministic.
#[derive(Debug, Clone)]
pub struct Codebook {
    /// (codebook_size, latent_dim)
    pub entries: Param,
    /// Per-entry selection counts, maintained during training as a
    /// mode-collapse diagnostic.
    pub usage: Vec<u64>,
}

impl Codebook {
    pub fn new(size: usize, latent_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Codebook {
            entries: Param::normal("codebook.entries", &[size, latent_dim], 0.5, rng),
            usage: vec![0; size],
        }
    }

    pub fn size(&self) -> usize {
        self.entries.value.shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.entries.value.shape()[1]
    }

    pub fn entry(&self, index: usize) -> Array1<f64> {
        crate::nn::view2(&self.entries.value).row(index).to_owned()
    }

    /// Entries selected at least once since the counters were last reset.
    pub fn active_entries(&self) -> usize {
        self.usage.iter().filter(|u| **u > 0).count()
    }
}

/// Result of quantizing one embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub index: usize,
    pub vector: Array1<f64>,
    /// `||sg(e) - q||^2`: pulls the selected entry toward the embedding.
    pub select_loss: f64,
    /// `beta * ||e - sg(q)||^2`: pulls the embedding toward the entry.
    pub commit_loss: f64,
}

/// Snaps `embedding` to its nearest codebook entry by squared Euclidean
/// distance (ties to the lowest index) and reports both selection-loss
/// terms. The forward value is the selected entry; under straight-through
/// training the gradient w.r.t. the embedding is the identity.
pub fn quantize(
    embedding: ndarray::ArrayView1<'_, f64>,
    codebook: &Codebook,
    commitment_coefficient: f64,
) -> Result<Quantized> {
    if embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("quantize: non-finite embedding"));
    }
    let entries = crate::nn::view2(&codebook.entries.value);
    if embedding.len() != entries.ncols() {
        return Err(Error::shape(format!(
            "quantize: embedding dim {} != codebook dim {}",
            embedding.len(),
            entries.ncols()
        )));
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, entry) in entries.rows().into_iter().enumerate() {
        let d: f64 = embedding
            .iter()
            .zip(entry.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(Quantized {
        index: best,
        vector: entries.row(best).to_owned(),
        select_loss: best_d,
        commit_loss: commitment_coefficient * best_d,
    })
}

/// A segment's discrete-backed embedding: the aggregated vector `z` fed to
/// the transformer, plus the per-frame codebook indices from encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLatent {
    pub z: Array1<f64>,
    pub frame_codes: Vec<usize>,
}

/// Loss components for one chunk. `total` is
/// `reconstruction + 0.5 * (select_encode + select_decode)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenizerLoss {
    pub reconstruction: f64,
    pub select_encode: f64,
    pub select_decode: f64,
    pub total: f64,
}

/// Composes the training objective from its parts. The reconstruction term
/// is mean squared error, the Gaussian-likelihood reading of the
/// log-probability term.
pub fn tokenizer_loss(
    original: &Array2<f64>,
    reconstruction: &Array2<f64>,
    select_encode: f64,
    select_decode: f64,
) -> Result<TokenizerLoss> {
    if original.raw_dim() != reconstruction.raw_dim() {
        return Err(Error::shape(format!(
            "tokenizer_loss: original {:?} vs reconstruction {:?}",
            original.shape(),
            reconstruction.shape()
        )));
    }
    let mse = (original - reconstruction).mapv(|v| v * v).mean().unwrap_or(0.0);
    Ok(TokenizerLoss {
        reconstruction: mse,
        select_encode,
        select_decode,
        total: mse + 0.5 * (select_encode + select_decode),
    })
}

/// The autoencoder: encoder convs, aggregation projection, up-projection,
/// decoder convs, codebook, and the per-channel normalization statistics of
/// its training split.
#[derive(Debug, Clone)]
pub struct VqTokenizer {
    pub config: TokenizerConfig,
    pub(crate) enc: Vec<Conv1d>,
    pub(crate) agg: Linear,
    pub(crate) up: Linear,
    pub(crate) dec: Vec<Conv1d>,
    pub codebook: Codebook,
    pub norm_mean: Array1<f64>,
    pub norm_std: Array1<f64>,
}

impl VqTokenizer {
    pub fn new(config: TokenizerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let ch = config.modality.channel_count;
        let d = config.latent_dim;
        let m = config.frames_per_segment;
        let k = config.kernel;

        let mut enc_widths = vec![ch];
        enc_widths.extend(&config.conv_channel_widths);
        enc_widths.push(d);
        let enc = enc_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv1d::new(&format!("enc{i}"), w[0], w[1], k, rng))
            .collect();

        let mut dec_widths = vec![d];
        dec_widths.extend(config.conv_channel_widths.iter().rev());
        dec_widths.push(ch);
        let dec = dec_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv1d::new(&format!("dec{i}"), w[0], w[1], k, rng))
            .collect();

        Ok(VqTokenizer {
            agg: Linear::new("agg", m * d, d, rng),
            up: Linear::new("up", d, m * d, rng),
            codebook: Codebook::new(config.codebook_size, d, rng),
            norm_mean: Array1::zeros(ch),
            norm_std: Array1::ones(ch),
            config,
            enc,
            dec,
        })
    }

    fn check_chunk(&self, chunk: &Array2<f64>) -> Result<()> {
        let want = (
            self.config.frames_per_segment,
            self.config.modality.channel_count,
        );
        if (chunk.nrows(), chunk.ncols()) != want {
            return Err(Error::shape(format!(
                "{} chunk is {}x{}, tokenizer expects {}x{}",
                self.config.modality.kind,
                chunk.nrows(),
                chunk.ncols(),
                want.0,
                want.1
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, chunk: &Array2<f64>) -> Array2<f64> {
        let mut out = chunk.clone();
        for mut row in out.rows_mut() {
            row -= &self.norm_mean;
            row /= &self.norm_std;
        }
        out
    }

    pub fn denormalize(&self, chunk: &Array2<f64>) -> Array2<f64> {
        let mut out = chunk.clone();
        for mut row in out.rows_mut() {
            row *= &self.norm_std;
            row += &self.norm_mean;
        }
        out
    }

    /// Encoder conv stack in inference mode: normalized frames to per-frame
    /// embeddings (`m` x latent).
    pub(crate) fn encode_frames(&self, x_norm: &Array2<f64>) -> Array2<f64> {
        let mut h = x_norm.clone();
        let last = self.enc.len() - 1;
        for (i, conv) in self.enc.iter().enumerate() {
            h = conv.apply(&h);
            if i != last {
                h = h.mapv(|v| Activation::Relu.eval(v));
            }
        }
        h
    }

    /// Decoder conv stack in inference mode: quantized embeddings back to
    /// normalized frames.
    pub(crate) fn decode_frames(&self, q: &Array2<f64>) -> Array2<f64> {
        let mut h = q.clone();
        let last = self.dec.len() - 1;
        for (i, conv) in self.dec.iter().enumerate() {
            h = conv.apply(&h);
            if i != last {
                h = h.mapv(|v| Activation::Relu.eval(v));
            }
        }
        h
    }

    fn quantize_rows(&self, e: &Array2<f64>) -> Result<(Array2<f64>, Vec<usize>, f64)> {
        let beta = self.config.commitment_coefficient;
        let mut q = Array2::zeros(e.raw_dim());
        let mut codes = Vec::with_capacity(e.nrows());
        let mut loss = 0.0;
        for (r, row) in e.rows().into_iter().enumerate() {
            let quantized = quantize(row, &self.codebook, beta)?;
            q.row_mut(r).assign(&quantized.vector);
            codes.push(quantized.index);
            loss += quantized.select_loss + quantized.commit_loss;
        }
        // averaged over frames and latent dims
        let denom = (e.nrows() * e.ncols()) as f64;
        Ok((q, codes, loss / denom))
    }

    /// Chunk -> per-frame embeddings -> quantization -> aggregated `z`.
    pub fn encode_segment(&self, chunk: &Array2<f64>) -> Result<SegmentLatent> {
        self.check_chunk(chunk)?;
        let x = self.normalize(chunk);
        let e = self.encode_frames(&x);
        let (q, frame_codes, _) = self.quantize_rows(&e)?;
        let flat = q.into_shape_with_order((1, self.config.frames_per_segment * self.config.latent_dim))
            .expect("m*d elements");
        let z = self.agg.apply(&flat).index_axis(Axis(0), 0).to_owned();
        Ok(SegmentLatent { z, frame_codes })
    }

    /// `z` -> up-projection -> re-quantization -> decoder. Returns the
    /// reconstruction in normalized space, the decode-side codes, and the
    /// decode-side selection loss.
    pub fn decode_latent(&self, latent: &SegmentLatent) -> Result<(Array2<f64>, Vec<usize>, f64)> {
        let d = self.config.latent_dim;
        let m = self.config.frames_per_segment;
        if latent.z.len() != d {
            return Err(Error::shape(format!(
                "decode_latent: z has dim {}, expected {d}",
                latent.z.len()
            )));
        }
        let z_row = latent
            .z
            .view()
            .into_shape_with_order((1, d))
            .expect("row vector");
        let up = self.up.apply(&z_row.to_owned());
        let u = up.into_shape_with_order((m, d)).expect("m*d elements");
        let (q2, dec_codes, sel_dec) = self.quantize_rows(&u)?;
        let recon = self.decode_frames(&q2);
        Ok((recon, dec_codes, sel_dec))
    }

    /// Full round trip in raw signal space.
    pub fn reconstruct(&self, chunk: &Array2<f64>) -> Result<Array2<f64>> {
        let latent = self.encode_segment(chunk)?;
        let (recon_norm, _, _) = self.decode_latent(&latent)?;
        Ok(self.denormalize(&recon_norm))
    }

    /// Round-trip error normalized per channel by the chunk's variance in
    /// normalized space (so 1.0 means "no better than predicting the mean").
    pub fn normalized_round_trip_mse(&self, chunks: &[Array2<f64>]) -> Result<f64> {
        let mut se = 0.0;
        let mut count = 0.0;
        for chunk in chunks {
            let x = self.normalize(chunk);
            let latent = self.encode_segment(chunk)?;
            let (recon, _, _) = self.decode_latent(&latent)?;
            se += (&x - &recon).mapv(|v| v * v).sum();
            count += x.len() as f64;
        }
        Ok(se / count)
    }
}

impl Module for VqTokenizer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for c in &mut self.enc {
            c.visit_params(f);
        }
        self.agg.visit_params(f);
        self.up.visit_params(f);
        for c in &mut self.dec {
            c.visit_params(f);
        }
        f(&mut self.codebook.entries);
    }
}
