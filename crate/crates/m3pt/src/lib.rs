//! Multi-party, multimodal social signal prediction.
//!
//! A causal transformer over a (time x person x modality) token grid with
//! blockwise attention masking and right-shifted residual connections,
//! fed by per-modality vector-quantized tokenizers, plus the data plumbing
//! and evaluation harness needed to exercise the architecture's no-leakage
//! and cross-person-dependency properties on synthetic sessions.
//!
//! Start with the [`guide`] for a narrative walkthrough, or jump straight
//! to [`mask`] for the attention-mask construction, [`vq`] for tokenizers,
//! and [`model`] for the transformer.

pub mod container;
pub mod data;
pub mod error;
pub mod eval;
pub mod guide;
pub mod mask;
pub mod model;
pub mod nn;
pub mod signal;
pub mod vq;

pub use error::{Error, Result};
