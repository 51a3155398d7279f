//! Dense, normalization, convolution, and activation layers.
//!
//! Each layer caches its forward inputs; `backward` consumes the cache,
//! accumulates parameter gradients, and returns the input gradient.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{view1, view2, view3, Module, Param};

/// Affine map `y = x W^T + b` over row vectors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param, // (out, in)
    pub b: Param, // (out,)
    cache_x: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Param::glorot(format!("{name}.w"), &[out_dim, in_dim], rng),
            b: Param::zeros(format!("{name}.b"), &[out_dim]),
            cache_x: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let w = view2(&self.w.value);
        let b = view1(&self.b.value);
        let mut y = x.dot(&w.t());
        y += &b;
        self.cache_x = Some(x.clone());
        y
    }

    /// Inference-only pass, no cache.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let w = view2(&self.w.value);
        let b = view1(&self.b.value);
        let mut y = x.dot(&w.t());
        y += &b;
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.take().expect("forward before backward");
        let gw = gy.t().dot(&x);
        super::add_assign_dyn(&mut self.w.grad, gw.view().into_dyn());
        let gb = gy.sum_axis(Axis(0));
        super::add_assign_dyn(&mut self.b.grad, gb.view().into_dyn());
        gy.dot(&view2(&self.w.value))
    }
}

impl Module for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Per-row layer normalization with learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    eps: f64,
    cache: Option<(Array2<f64>, Array1<f64>)>, // (normalized x, inv std per row)
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: Param::new(format!("{name}.gamma"), ndarray::ArrayD::ones(ndarray::IxDyn(&[dim]))),
            beta: Param::zeros(format!("{name}.beta"), &[dim]),
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let d = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).expect("nonempty rows");
        let mut centered = x.clone();
        for (mut row, m) in centered.rows_mut().into_iter().zip(mean.iter()) {
            row -= *m;
        }
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = centered;
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter()) {
            row *= *is;
        }
        let gamma = view1(&self.gamma.value);
        let beta = view1(&self.beta.value);
        let mut y = xhat.clone();
        for mut row in y.rows_mut() {
            row *= &gamma;
            row += &beta;
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let d = x.ncols() as f64;
        let gamma = view1(&self.gamma.value);
        let beta = view1(&self.beta.value);
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let m = row.sum() / d;
            row -= m;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let inv = 1.0 / (var + self.eps).sqrt();
            row *= inv;
            row *= &gamma;
            row += &beta;
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let (xhat, inv_std) = self.cache.take().expect("forward before backward");
        let d = xhat.ncols() as f64;
        let gamma = view1(&self.gamma.value);

        let ggamma = (gy * &xhat).sum_axis(Axis(0));
        super::add_assign_dyn(&mut self.gamma.grad, ggamma.view().into_dyn());
        let gbeta = gy.sum_axis(Axis(0));
        super::add_assign_dyn(&mut self.beta.grad, gbeta.view().into_dyn());

        // dx = (inv_std / d) * (d*gxhat - sum(gxhat) - xhat * sum(gxhat * xhat))
        let gxhat = gy * &gamma;
        let sum_g = gxhat.sum_axis(Axis(1));
        let sum_gx = (&gxhat * &xhat).sum_axis(Axis(1));
        let mut gx = gxhat * d;
        for (r, mut row) in gx.rows_mut().into_iter().enumerate() {
            row -= sum_g[r];
            let correction = &xhat.row(r) * sum_gx[r];
            row -= &correction;
            row *= inv_std[r] / d;
        }
        gx
    }
}

impl Module for LayerNorm {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
}

/// Elementwise activation with cached input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
        }
    }

    pub fn grad(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                let t = u.tanh();
                let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Clone)]
pub struct ActLayer {
    pub kind: Activation,
    cache_x: Option<Array2<f64>>,
}

impl ActLayer {
    pub fn new(kind: Activation) -> Self {
        ActLayer { kind, cache_x: None }
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        self.cache_x = Some(x.clone());
        x.mapv(|v| self.kind.eval(v))
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.mapv(|v| self.kind.eval(v))
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.take().expect("forward before backward");
        let mut gx = x.mapv(|v| self.kind.grad(v));
        gx *= gy;
        gx
    }
}

/// Inverted dropout: scales kept units by `1/(1-p)` at train time, identity
/// at eval. Owns its RNG so a fixed construction seed reproduces runs.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
    cache_mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(p: f64, rng: &mut ChaCha8Rng) -> Self {
        use rand::SeedableRng;
        Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
            cache_mask: None,
        }
    }

    pub fn forward_train(&mut self, x: &Array2<f64>) -> Array2<f64> {
        if self.p == 0.0 {
            self.cache_mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
            if self.rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.cache_mask = Some(mask);
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        match self.cache_mask.take() {
            Some(mask) => gy * &mask,
            None => gy.clone(),
        }
    }
}

/// Stride-1, same-length 1-D convolution over the time axis.
///
/// Input rows are frames, columns are channels; the kernel width must be
/// odd. Also serves as the adjoint (transposed) convolution in the decoder,
/// where stride-1 transposed convolution coincides with a flipped-kernel
/// convolution.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: Param, // (out_ch, in_ch, k)
    pub b: Param, // (out_ch,)
    kernel: usize,
    cache_x: Option<Array2<f64>>,
}

impl Conv1d {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(kernel % 2 == 1, "kernel width must be odd");
        Conv1d {
            w: Param::glorot(format!("{name}.w"), &[out_ch, in_ch, kernel], rng),
            b: Param::zeros(format!("{name}.b"), &[out_ch]),
            kernel,
            cache_x: None,
        }
    }

    pub fn out_ch(&self) -> usize {
        self.w.value.shape()[0]
    }

    fn convolve(&self, x: &Array2<f64>) -> Array2<f64> {
        let w = view3(&self.w.value);
        let b = view1(&self.b.value);
        let (time, in_ch) = (x.nrows(), x.ncols());
        let out_ch = w.shape()[0];
        let pad = self.kernel / 2;
        let mut y = Array2::zeros((time, out_ch));
        for t in 0..time {
            for o in 0..out_ch {
                let mut acc = b[o];
                for dt in 0..self.kernel {
                    let src = t as isize + dt as isize - pad as isize;
                    if src < 0 || src >= time as isize {
                        continue;
                    }
                    let src = src as usize;
                    for c in 0..in_ch {
                        acc += w[(o, c, dt)] * x[(src, c)];
                    }
                }
                y[(t, o)] = acc;
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        let y = self.convolve(x);
        self.cache_x = Some(x.clone());
        y
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.convolve(x)
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache_x.take().expect("forward before backward");
        let (time, in_ch) = (x.nrows(), x.ncols());
        let out_ch = self.w.value.shape()[0];
        let pad = self.kernel / 2;

        let mut gw = Array3::<f64>::zeros((out_ch, in_ch, self.kernel));
        let mut gb = Array1::<f64>::zeros(out_ch);
        let mut gx = Array2::<f64>::zeros((time, in_ch));
        {
            let w = view3(&self.w.value);
            for t in 0..time {
                for o in 0..out_ch {
                    let g = gy[(t, o)];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    for dt in 0..self.kernel {
                        let src = t as isize + dt as isize - pad as isize;
                        if src < 0 || src >= time as isize {
                            continue;
                        }
                        let src = src as usize;
                        for c in 0..in_ch {
                            gw[(o, c, dt)] += g * x[(src, c)];
                            gx[(src, c)] += g * w[(o, c, dt)];
                        }
                    }
                }
            }
        }
        super::add_assign_dyn(&mut self.w.grad, gw.view().into_dyn());
        super::add_assign_dyn(&mut self.b.grad, gb.view().into_dyn());
        gx
    }
}

impl Module for Conv1d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Right-shift by one timestep block: output block `t` = input block `t-1`,
/// block 0 zeroed. The backward pass is the corresponding left shift.
pub fn right_shift_blocks(x: &Array2<f64>, block_len: usize) -> Array2<f64> {
    let mut y = Array2::zeros(x.raw_dim());
    let rows = x.nrows();
    if rows > block_len {
        y.slice_mut(s![block_len.., ..])
            .assign(&x.slice(s![..rows - block_len, ..]));
    }
    y
}

pub fn right_shift_backward(gy: &Array2<f64>, block_len: usize) -> Array2<f64> {
    let mut gx = Array2::zeros(gy.raw_dim());
    let rows = gy.nrows();
    if rows > block_len {
        gx.slice_mut(s![..rows - block_len, ..])
            .assign(&gy.slice(s![block_len.., ..]));
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    /// Central-difference check of a scalar loss against analytic grads.
    fn finite_diff_ok<F>(mut f: F, param: &mut [f64], analytic: &[f64], tol: f64) -> bool
    where
        F: FnMut(&[f64]) -> f64,
    {
        let h = 1e-6;
        for i in 0..param.len() {
            let orig = param[i];
            param[i] = orig + h;
            let up = f(param);
            param[i] = orig - h;
            let down = f(param);
            param[i] = orig;
            let num = (up - down) / (2.0 * h);
            let denom = num.abs().max(analytic[i].abs()).max(1e-8);
            if ((num - analytic[i]) / denom).abs() > tol {
                return false;
            }
        }
        true
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut r = rng();
        let mut lin = Linear::new("t", 3, 2, &mut r);
        let x = Array2::from_shape_fn((4, 3), |_| r.random_range(-1.0..1.0));
        let y = lin.forward(&x);
        // loss = sum of squares
        let gy = y.mapv(|v| 2.0 * v);
        let gx = lin.backward(&gy);

        // check dL/dW numerically
        let w_flat: Vec<f64> = lin.w.value.iter().copied().collect();
        let gw: Vec<f64> = lin.w.grad.iter().copied().collect();
        let b0 = lin.b.value.clone();
        let mut w_probe = w_flat.clone();
        let ok = finite_diff_ok(
            |wv| {
                let w = ndarray::Array2::from_shape_vec((2, 3), wv.to_vec()).unwrap();
                let b = b0.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let y = x.dot(&w.t()) + &b;
                y.iter().map(|v| v * v).sum()
            },
            &mut w_probe,
            &gw,
            1e-5,
        );
        assert!(ok, "linear weight grads disagree with finite differences");

        // check dL/dx numerically
        let mut x_probe: Vec<f64> = x.iter().copied().collect();
        let gx_flat: Vec<f64> = gx.iter().copied().collect();
        let w_fixed = ndarray::Array2::from_shape_vec((2, 3), w_flat).unwrap();
        let ok = finite_diff_ok(
            |xv| {
                let xa = ndarray::Array2::from_shape_vec((4, 3), xv.to_vec()).unwrap();
                let b = b0.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let y = xa.dot(&w_fixed.t()) + &b;
                y.iter().map(|v| v * v).sum()
            },
            &mut x_probe,
            &gx_flat,
            1e-5,
        );
        assert!(ok, "linear input grads disagree with finite differences");
    }

    #[test]
    fn layernorm_gradients_match_finite_differences() {
        let mut r = rng();
        let mut ln = LayerNorm::new("t", 5);
        // non-trivial gamma/beta
        ln.gamma.value.iter_mut().for_each(|v| *v = r.random_range(0.5..1.5));
        ln.beta.value.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
        let x = Array2::from_shape_fn((3, 5), |_| r.random_range(-2.0..2.0));
        let y = ln.forward(&x);
        let gy = y.mapv(|v| 2.0 * v);
        let gx = ln.backward(&gy);

        let gamma = ln.gamma.value.clone();
        let beta = ln.beta.value.clone();
        let mut x_probe: Vec<f64> = x.iter().copied().collect();
        let gx_flat: Vec<f64> = gx.iter().copied().collect();
        let ok = finite_diff_ok(
            |xv| {
                let xa = ndarray::Array2::from_shape_vec((3, 5), xv.to_vec()).unwrap();
                let tmp = LayerNorm {
                    gamma: Param::new("g", gamma.clone()),
                    beta: Param::new("b", beta.clone()),
                    eps: 1e-5,
                    cache: None,
                };
                let y = tmp.apply(&xa);
                y.iter().map(|v| v * v).sum()
            },
            &mut x_probe,
            &gx_flat,
            1e-4,
        );
        assert!(ok, "layernorm input grads disagree with finite differences");
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut r = rng();
        let mut conv = Conv1d::new("t", 2, 3, 3, &mut r);
        let x = Array2::from_shape_fn((7, 2), |_| r.random_range(-1.0..1.0));
        let y = conv.forward(&x);
        let gy = y.mapv(|v| 2.0 * v);
        let gx = conv.backward(&gy);

        let w0 = conv.w.value.clone();
        let b0 = conv.b.value.clone();
        let gw: Vec<f64> = conv.w.grad.iter().copied().collect();
        let mut w_probe: Vec<f64> = w0.iter().copied().collect();
        let ok = finite_diff_ok(
            |wv| {
                let tmp = Conv1d {
                    w: Param::new(
                        "w",
                        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[3, 2, 3]), wv.to_vec())
                            .unwrap(),
                    ),
                    b: Param::new("b", b0.clone()),
                    kernel: 3,
                    cache_x: None,
                };
                let y = tmp.apply(&x);
                y.iter().map(|v| v * v).sum()
            },
            &mut w_probe,
            &gw,
            1e-5,
        );
        assert!(ok, "conv weight grads disagree with finite differences");

        let gx_flat: Vec<f64> = gx.iter().copied().collect();
        let mut x_probe: Vec<f64> = x.iter().copied().collect();
        let ok = finite_diff_ok(
            |xv| {
                let xa = ndarray::Array2::from_shape_vec((7, 2), xv.to_vec()).unwrap();
                let tmp = Conv1d {
                    w: Param::new("w", w0.clone()),
                    b: Param::new("b", b0.clone()),
                    kernel: 3,
                    cache_x: None,
                };
                let y = tmp.apply(&xa);
                y.iter().map(|v| v * v).sum()
            },
            &mut x_probe,
            &gx_flat,
            1e-5,
        );
        assert!(ok, "conv input grads disagree with finite differences");
    }

    #[test]
    fn gelu_grad_matches_finite_differences() {
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let h = 1e-6;
            let num = (Activation::Gelu.eval(x + h) - Activation::Gelu.eval(x - h)) / (2.0 * h);
            assert!((num - Activation::Gelu.grad(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn right_shift_definition() {
        // T=3 blocks of one row: [a, b, c] -> [0, a, b]
        let x = ndarray::array![[1.0], [2.0], [3.0]];
        let y = right_shift_blocks(&x, 1);
        assert_eq!(y, ndarray::array![[0.0], [1.0], [2.0]]);

        // 8 rows, block 4: rows 0..4 zero, rows 4..8 = input rows 0..4
        let x = Array2::from_shape_fn((8, 2), |(r, c)| (r * 2 + c) as f64);
        let y = right_shift_blocks(&x, 4);
        assert!(y.slice(s![..4, ..]).iter().all(|v| *v == 0.0));
        assert_eq!(y.slice(s![4.., ..]), x.slice(s![..4, ..]));
    }

    #[test]
    fn double_shift_composes() {
        let x = Array2::from_shape_fn((6, 1), |(r, _)| r as f64 + 1.0);
        let once = right_shift_blocks(&x, 2);
        let twice = right_shift_blocks(&once, 2);
        // shifting twice moves everything down two blocks
        assert_eq!(twice, ndarray::array![[0.0], [0.0], [0.0], [0.0], [1.0], [2.0]]);
    }

    #[test]
    fn shift_backward_is_adjoint() {
        // <shift(x), y> == <x, shift_backward(y)> for all x, y
        let mut r = rng();
        let x = Array2::from_shape_fn((6, 2), |_| r.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((6, 2), |_| r.random_range(-1.0..1.0));
        let lhs: f64 = (&right_shift_blocks(&x, 2) * &y).sum();
        let rhs: f64 = (&x * &right_shift_backward(&y, 2)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn dropout_eval_identity_and_train_scaling() {
        let mut r = rng();
        let mut d = Dropout::new(0.5, &mut r);
        let x = Array2::ones((50, 20));
        let y = d.forward_train(&x);
        // kept units scaled by 2, dropped are 0
        for v in y.iter() {
            assert!(*v == 0.0 || (*v - 2.0).abs() < 1e-12);
        }
        let mut d0 = Dropout::new(0.0, &mut r);
        let y0 = d0.forward_train(&x);
        assert_eq!(y0, x);
    }
}
