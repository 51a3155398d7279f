//! Minimal dense-layer toolkit with explicit forward/backward passes.
//!
//! Everything runs single-threaded on `f64` ndarrays, which keeps gradient
//! checks tight and runs bitwise-reproducible for a fixed seed. Layers cache
//! whatever the backward pass needs during `forward`; gradients accumulate
//! into each [`Param`] until the optimizer consumes them.

pub mod adam;
pub mod attention;
pub mod layers;

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;

/// One learnable tensor: value, gradient accumulator, and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    pub m: ArrayD<f64>,
    pub v: ArrayD<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f64>) -> Self {
        let zeros = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        Param::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    /// Glorot-uniform init over the first two axes' fan-in/out.
    pub fn glorot(name: impl Into<String>, shape: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let (fan_out, fan_in) = match shape.len() {
            1 => (shape[0], shape[0]),
            2 => (shape[0], shape[1]),
            // conv kernels (out, in, k): fan counts include the kernel width
            3 => (shape[0] * shape[2], shape[1] * shape[2]),
            _ => (shape[0], shape[shape.len() - 1]),
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(-bound..bound));
        Param::new(name, value)
    }

    /// Small-normal init for embedding-style tables.
    pub fn normal(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Self {
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| {
            // Box-Muller
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        Param::new(name, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything holding trainable parameters exposes them through a visitor so
/// optimizers and checkpointing never need layer-specific knowledge.
pub trait Module {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    /// Snapshot of all parameter values, keyed by name.
    fn export_params(&mut self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| {
            out.push((
                p.name.clone(),
                p.value.shape().to_vec(),
                p.value.iter().copied().collect(),
            ));
        });
        out
    }

    /// Restores parameter values from an `export_params` snapshot. Every
    /// parameter must be present with a matching shape.
    fn import_params(
        &mut self,
        snapshot: &[(String, Vec<usize>, Vec<f64>)],
    ) -> crate::error::Result<()> {
        use std::collections::HashMap;
        let map: HashMap<&str, (&Vec<usize>, &Vec<f64>)> = snapshot
            .iter()
            .map(|(n, s, d)| (n.as_str(), (s, d)))
            .collect();
        let mut err: Option<String> = None;
        self.visit_params(&mut |p| {
            if err.is_some() {
                return;
            }
            match map.get(p.name.as_str()) {
                Some((shape, data)) if shape.as_slice() == p.value.shape() => {
                    p.value = ArrayD::from_shape_vec(IxDyn(shape), (*data).clone())
                        .expect("shape/data length agree");
                }
                Some((shape, _)) => {
                    err = Some(format!(
                        "param {}: checkpoint shape {:?} != model shape {:?}",
                        p.name,
                        shape,
                        p.value.shape()
                    ));
                }
                None => err = Some(format!("param {} missing from checkpoint", p.name)),
            }
        });
        match err {
            Some(e) => Err(crate::error::Error::config(e)),
            None => Ok(()),
        }
    }

    /// Euclidean norm of all gradients, used for clipping and divergence
    /// diagnostics.
    fn grad_norm(&mut self) -> f64 {
        let mut acc = 0.0;
        self.visit_params(&mut |p| acc += p.grad.iter().map(|g| g * g).sum::<f64>());
        acc.sqrt()
    }

    fn all_finite(&mut self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |p| ok &= p.value.iter().all(|v| v.is_finite()));
        ok
    }
}

pub(crate) fn view2<'a>(a: &'a ArrayD<f64>) -> ndarray::ArrayView2<'a, f64> {
    a.view().into_dimensionality().expect("rank-2 param")
}

pub(crate) fn view1<'a>(a: &'a ArrayD<f64>) -> ndarray::ArrayView1<'a, f64> {
    a.view().into_dimensionality().expect("rank-1 param")
}

pub(crate) fn view3<'a>(a: &'a ArrayD<f64>) -> ndarray::ArrayView3<'a, f64> {
    a.view().into_dimensionality().expect("rank-3 param")
}

/// Flattens a dynamic view assertion for gradient accumulation.
pub(crate) fn add_assign_dyn(target: &mut ArrayD<f64>, delta: ArrayViewD<'_, f64>) {
    *target += &delta;
}
