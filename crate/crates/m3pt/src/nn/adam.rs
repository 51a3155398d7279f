//! Adam with optional global-gradient-norm clipping.

use super::{Module, Param};

#[derive(Debug, Clone, Copy)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global norm above which gradients are rescaled; 0 disables clipping.
    pub clip_norm: f64,
    step: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            step: 0,
        }
    }

    pub fn with_clip(mut self, clip_norm: f64) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Returns the pre-clip gradient norm for diagnostics.
    pub fn step(&mut self, model: &mut dyn Module) -> f64 {
        let norm = model.grad_norm();
        let scale = if self.clip_norm > 0.0 && norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        model.visit_params(&mut |p: &mut Param| {
            for i in 0..p.value.len() {
                let g = p.grad.as_slice_mut().expect("contiguous")[i] * scale;
                let m = &mut p.m.as_slice_mut().expect("contiguous")[i];
                *m = b1 * *m + (1.0 - b1) * g;
                let v = &mut p.v.as_slice_mut().expect("contiguous")[i];
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / bias1;
                let vhat = *v / bias2;
                p.value.as_slice_mut().expect("contiguous")[i] -=
                    lr * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
        });
        norm
    }
}
