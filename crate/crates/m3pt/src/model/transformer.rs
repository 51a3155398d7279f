//! The causal transformer stack.
//!
//! Pre-norm layers with the conventional identity residual replaced by a
//! right-shifted one at both sub-layers:
//!
//! ```text
//! y = shift(x) + Attn(LN1(x), mask)
//! z = shift(y) + FFN(LN2(y))
//! ```
//!
//! `shift` moves features one timestep block later (block 0 becomes zeros),
//! so a position's own current-block features never re-enter through the
//! residual path — the leak that an identity residual would reintroduce
//! under blockwise masking.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::mask::AttentionMask;
use crate::nn::attention::{HeadWeights, MultiHeadAttention};
use crate::nn::layers::{right_shift_backward, right_shift_blocks, ActLayer, Activation, Dropout, LayerNorm, Linear};
use crate::nn::{Module, Param};

#[derive(Debug, Clone)]
pub struct TransformerLayer {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    drop1: Dropout,
    ln2: LayerNorm,
    ff1: Linear,
    act: ActLayer,
    ff2: Linear,
    drop2: Dropout,
    block_len: usize,
}

/// Per-layer intermediate tensors captured by audit forwards.
#[derive(Debug, Clone)]
pub struct LayerAudit {
    /// `shift(x)`: the residual contribution at the attention sub-layer.
    pub attn_residual: Array2<f64>,
    pub attn_out: Array2<f64>,
    /// `shift(y)`: the residual contribution at the feed-forward sub-layer.
    pub ffn_residual: Array2<f64>,
    pub ffn_out: Array2<f64>,
    pub output: Array2<f64>,
}

/// Options for audit forwards.
#[derive(Debug, Clone, Copy, Default)]
pub struct AuditOptions {
    /// Replace every attention output with zeros, isolating the residual
    /// path.
    pub force_attention_zero: bool,
    /// Capture post-softmax attention weights per layer and head.
    pub capture_attention: bool,
    /// Capture per-layer residual/output tensors.
    pub capture_layers: bool,
}

#[derive(Debug, Clone, Default)]
pub struct AuditRecord {
    /// One entry per layer: (heads, L, L) post-softmax weights.
    pub attention: Vec<HeadWeights>,
    pub layers: Vec<LayerAudit>,
}

impl TransformerLayer {
    pub fn new(
        name: &str,
        hidden: usize,
        num_heads: usize,
        ff_mult: usize,
        dropout: f64,
        block_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        TransformerLayer {
            ln1: LayerNorm::new(&format!("{name}.ln1"), hidden),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), hidden, num_heads, rng),
            drop1: Dropout::new(dropout, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), hidden),
            ff1: Linear::new(&format!("{name}.ff1"), hidden, hidden * ff_mult, rng),
            act: ActLayer::new(Activation::Gelu),
            ff2: Linear::new(&format!("{name}.ff2"), hidden * ff_mult, hidden, rng),
            drop2: Dropout::new(dropout, rng),
            block_len,
        }
    }

    /// Training forward: caches everything for `backward`.
    pub fn forward(&mut self, x: &Array2<f64>, mask: &AttentionMask) -> Array2<f64> {
        let a_in = self.ln1.forward(x);
        let attn_out = self.attn.forward(&a_in, mask, None);
        let attn_out = self.drop1.forward_train(&attn_out);
        let y = right_shift_blocks(x, self.block_len) + attn_out;

        let f_in = self.ln2.forward(&y);
        let ff = self.ff2.forward(&self.act.forward(&self.ff1.forward(&f_in)));
        let ff = self.drop2.forward_train(&ff);
        right_shift_blocks(&y, self.block_len) + ff
    }

    pub fn backward(&mut self, gz: &Array2<f64>, mask: &AttentionMask) -> Array2<f64> {
        // z = shift(y) + ff(ln2(y))
        let g_ff = self.drop2.backward(gz);
        let g_pre_norm = self.ff1_backchain(&g_ff);
        let g_f_in = self.ln2.backward(&g_pre_norm);
        let gy = right_shift_backward(gz, self.block_len) + g_f_in;

        // y = shift(x) + attn(ln1(x))
        let g_attn = self.drop1.backward(&gy);
        let g_a_in = self.attn.backward(&g_attn, mask);
        right_shift_backward(&gy, self.block_len) + self.ln1.backward(&g_a_in)
    }

    fn ff1_backchain(&mut self, g_ff: &Array2<f64>) -> Array2<f64> {
        let g = self.ff2.backward(g_ff);
        let g = self.act.backward(&g);
        self.ff1.backward(&g)
    }

    /// Inference forward; per-layer audit capture optional.
    pub fn apply(
        &self,
        x: &Array2<f64>,
        mask: &AttentionMask,
        opts: &AuditOptions,
        record: Option<&mut AuditRecord>,
    ) -> Array2<f64> {
        let a_in = self.ln1.apply(x);
        let mut capture = Vec::new();
        let attn_out = {
            let cap = if opts.capture_attention {
                Some(&mut capture)
            } else {
                None
            };
            let out = self.attn.apply(&a_in, mask, cap);
            if opts.force_attention_zero {
                Array2::zeros(out.raw_dim())
            } else {
                out
            }
        };
        let attn_residual = right_shift_blocks(x, self.block_len);
        let y = &attn_residual + &attn_out;

        let f_in = self.ln2.apply(&y);
        let ffn_out = self
            .ff2
            .apply(&self.act.apply(&self.ff1.apply(&f_in)));
        let ffn_residual = right_shift_blocks(&y, self.block_len);
        let z = &ffn_residual + &ffn_out;

        if let Some(rec) = record {
            if opts.capture_attention {
                rec.attention.extend(capture);
            }
            if opts.capture_layers {
                rec.layers.push(LayerAudit {
                    attn_residual,
                    attn_out,
                    ffn_residual,
                    ffn_out,
                    output: z.clone(),
                });
            }
        }
        z
    }
}

impl Module for TransformerLayer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.ln1.visit_params(f);
        self.attn.visit_params(f);
        self.ln2.visit_params(f);
        self.ff1.visit_params(f);
        self.ff2.visit_params(f);
    }
}
