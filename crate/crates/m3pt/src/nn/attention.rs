//! Multi-head self-attention with a hard boolean mask.
//!
//! The softmax is evaluated only over allowed keys, so disallowed weights
//! are exactly 0.0 rather than merely tiny. A query row whose mask admits no
//! key produces a zero context vector instead of a NaN softmax.

use ndarray::{s, Array2, Array3};
use rand_chacha::ChaCha8Rng;

use super::layers::Linear;
use super::{Module, Param};
use crate::mask::AttentionMask;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub num_heads: usize,
    pub head_dim: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    cache: Option<AttnCache>,
}

#[derive(Debug, Clone)]
struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Post-softmax weights per head: (head, query, key).
    weights: Array3<f64>,
}

/// Per-head attention weights captured for audits.
pub type HeadWeights = Array3<f64>;

impl MultiHeadAttention {
    pub fn new(name: &str, hidden: usize, num_heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(hidden % num_heads == 0, "hidden_dim must divide into heads");
        MultiHeadAttention {
            num_heads,
            head_dim: hidden / num_heads,
            wq: Linear::new(&format!("{name}.wq"), hidden, hidden, rng),
            wk: Linear::new(&format!("{name}.wk"), hidden, hidden, rng),
            wv: Linear::new(&format!("{name}.wv"), hidden, hidden, rng),
            wo: Linear::new(&format!("{name}.wo"), hidden, hidden, rng),
            cache: None,
        }
    }

    /// Computes per-head post-softmax weights and the concatenated context
    /// from projected q/k/v.
    fn attend(
        &self,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
        mask: &AttentionMask,
    ) -> (Array3<f64>, Array2<f64>) {
        let l = q.nrows();
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut weights = Array3::<f64>::zeros((self.num_heads, l, l));
        let mut concat = Array2::<f64>::zeros((l, self.num_heads * self.head_dim));
        for h in 0..self.num_heads {
            let cols = h * self.head_dim..(h + 1) * self.head_dim;
            let qh = q.slice(s![.., cols.clone()]);
            let kh = k.slice(s![.., cols.clone()]);
            let vh = v.slice(s![.., cols.clone()]);
            let scores = qh.dot(&kh.t()) * scale;
            let mut wts = weights.slice_mut(s![h, .., ..]);
            for qi in 0..l {
                // softmax over allowed keys only; disallowed stay exactly 0
                let row = mask.allow.row(qi);
                let mut max = f64::NEG_INFINITY;
                for ki in 0..l {
                    if row[ki] && scores[(qi, ki)] > max {
                        max = scores[(qi, ki)];
                    }
                }
                if max == f64::NEG_INFINITY {
                    continue; // fully masked row: zero context
                }
                let mut denom = 0.0;
                for ki in 0..l {
                    if row[ki] {
                        let e = (scores[(qi, ki)] - max).exp();
                        wts[(qi, ki)] = e;
                        denom += e;
                    }
                }
                for ki in 0..l {
                    if row[ki] {
                        wts[(qi, ki)] /= denom;
                    }
                }
            }
            let ctx = wts.dot(&vh);
            concat.slice_mut(s![.., cols]).assign(&ctx);
        }
        (weights, concat)
    }

    /// Forward pass; optionally copies the post-softmax weights out for
    /// audit assertions.
    pub fn forward(
        &mut self,
        x: &Array2<f64>,
        mask: &AttentionMask,
        capture: Option<&mut Vec<HeadWeights>>,
    ) -> Array2<f64> {
        assert_eq!(mask.len(), x.nrows(), "mask length must match sequence length");
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let (weights, concat) = self.attend(&q, &k, &v, mask);
        if let Some(out) = capture {
            out.push(weights.clone());
        }
        let y = self.wo.forward(&concat);
        self.cache = Some(AttnCache { q, k, v, weights });
        y
    }

    /// Inference pass: no caches, usable on `&self`.
    pub fn apply(
        &self,
        x: &Array2<f64>,
        mask: &AttentionMask,
        capture: Option<&mut Vec<HeadWeights>>,
    ) -> Array2<f64> {
        assert_eq!(mask.len(), x.nrows(), "mask length must match sequence length");
        let q = self.wq.apply(x);
        let k = self.wk.apply(x);
        let v = self.wv.apply(x);
        let (weights, concat) = self.attend(&q, &k, &v, mask);
        if let Some(out) = capture {
            out.push(weights);
        }
        self.wo.apply(&concat)
    }

    pub fn backward(&mut self, gy: &Array2<f64>, mask: &AttentionMask) -> Array2<f64> {
        let cache = self.cache.take().expect("forward before backward");
        let l = gy.nrows();
        let scale = 1.0 / (self.head_dim as f64).sqrt();

        let gconcat = self.wo.backward(gy);
        let mut gq = Array2::<f64>::zeros(cache.q.raw_dim());
        let mut gk = Array2::<f64>::zeros(cache.k.raw_dim());
        let mut gv = Array2::<f64>::zeros(cache.v.raw_dim());

        for h in 0..self.num_heads {
            let cols = h * self.head_dim..(h + 1) * self.head_dim;
            let gctx = gconcat.slice(s![.., cols.clone()]);
            let wts = cache.weights.slice(s![h, .., ..]);
            let qh = cache.q.slice(s![.., cols.clone()]);
            let kh = cache.k.slice(s![.., cols.clone()]);
            let vh = cache.v.slice(s![.., cols.clone()]);

            // dV = A^T dCtx
            gv.slice_mut(s![.., cols.clone()])
                .assign(&wts.t().dot(&gctx));

            // dA = dCtx V^T, then masked softmax backward per row
            let ga = gctx.dot(&vh.t());
            let mut gs = Array2::<f64>::zeros((l, l));
            for qi in 0..l {
                let row = mask.allow.row(qi);
                let mut dot = 0.0;
                for ki in 0..l {
                    if row[ki] {
                        dot += wts[(qi, ki)] * ga[(qi, ki)];
                    }
                }
                for ki in 0..l {
                    if row[ki] {
                        gs[(qi, ki)] = wts[(qi, ki)] * (ga[(qi, ki)] - dot);
                    }
                }
            }
            gs *= scale;
            gq.slice_mut(s![.., cols.clone()]).assign(&gs.dot(&kh));
            gk.slice_mut(s![.., cols]).assign(&gs.t().dot(&qh));
        }

        let gx_q = self.wq.backward(&gq);
        let gx_k = self.wk.backward(&gk);
        let gx_v = self.wv.backward(&gv);
        gx_q + gx_k + gx_v
    }
}

impl Module for MultiHeadAttention {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.wq.visit_params(f);
        self.wk.visit_params(f);
        self.wv.visit_params(f);
        self.wo.visit_params(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{build_blockwise_mask, MaskSpec};
    use rand::{Rng, SeedableRng};

    #[test]
    fn disallowed_weights_are_exactly_zero_and_rows_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = MaskSpec::new(3, 2, 2).unwrap();
        let mask = build_blockwise_mask(&spec).unwrap();
        let mut attn = MultiHeadAttention::new("a", 16, 4, &mut rng);
        let x = Array2::from_shape_fn((spec.len(), 16), |_| rng.random_range(-1.0..1.0));
        let mut captured = Vec::new();
        let _ = attn.forward(&x, &mask, Some(&mut captured));
        let weights = &captured[0];
        for h in 0..4 {
            for q in 0..spec.len() {
                let mut sum = 0.0;
                let mut any = false;
                for k in 0..spec.len() {
                    let w = weights[(h, q, k)];
                    if mask.allow[(q, k)] {
                        any = true;
                        sum += w;
                    } else {
                        assert_eq!(w, 0.0, "disallowed weight must be exactly zero");
                    }
                }
                if any {
                    assert!((sum - 1.0).abs() < 1e-12);
                } else {
                    assert_eq!(sum, 0.0);
                }
            }
        }
    }

    #[test]
    fn fully_masked_row_yields_zero_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = MaskSpec::new(1, 1, 1).unwrap();
        let mask = build_blockwise_mask(&spec).unwrap();
        let mut attn = MultiHeadAttention::new("a", 8, 2, &mut rng);
        // zero the output projection bias so zero context maps to zero output
        attn.wo.b.value.fill(0.0);
        let x = Array2::from_shape_fn((1, 8), |_| rng.random_range(-1.0..1.0));
        let y = attn.forward(&x, &mask, None);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MaskSpec::new(2, 2, 1).unwrap();
        let mask = build_blockwise_mask(&spec).unwrap();
        let mut attn = MultiHeadAttention::new("a", 8, 2, &mut rng);
        let x = Array2::from_shape_fn((spec.len(), 8), |_| rng.random_range(-1.0..1.0));

        let y = attn.forward(&x, &mask, None);
        let gy = y.mapv(|v| 2.0 * v);
        let gx = attn.backward(&gy, &mask);

        let h = 1e-6;
        let loss = |attn: &mut MultiHeadAttention, x: &Array2<f64>| -> f64 {
            let y = attn.forward(x, &mask, None);
            attn.cache = None;
            y.iter().map(|v| v * v).sum()
        };
        for idx in [(0usize, 0usize), (1, 3), (3, 7), (2, 2)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let up = loss(&mut attn, &xp);
            xp[idx] -= 2.0 * h;
            let down = loss(&mut attn, &xp);
            let num = (up - down) / (2.0 * h);
            let rel = (num - gx[idx]).abs() / num.abs().max(gx[idx].abs()).max(1e-8);
            assert!(rel < 1e-4, "input grad mismatch at {idx:?}: {num} vs {}", gx[idx]);
        }

        // spot-check a few weight coordinates of each projection
        let gw_q: Vec<f64> = attn.wq.w.grad.iter().copied().collect();
        let base: Vec<f64> = attn.wq.w.value.iter().copied().collect();
        for flat in [0usize, 9, 30, 63] {
            let mut probe = base.clone();
            probe[flat] += h;
            attn.wq.w.value = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[8, 8]), probe.clone()).unwrap();
            let up = loss(&mut attn, &x);
            probe[flat] -= 2.0 * h;
            attn.wq.w.value = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[8, 8]), probe.clone()).unwrap();
            let down = loss(&mut attn, &x);
            probe[flat] += h;
            attn.wq.w.value = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[8, 8]), probe).unwrap();
            let num = (up - down) / (2.0 * h);
            let rel = (num - gw_q[flat]).abs() / num.abs().max(gw_q[flat].abs()).max(1e-8);
            assert!(rel < 1e-4, "wq grad mismatch at {flat}: {num} vs {}", gw_q[flat]);
        }
    }
}
