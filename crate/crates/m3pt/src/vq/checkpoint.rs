//! Tokenizer checkpoint: config, parameters, codebook, and normalization
//! statistics in one versioned container per modality.

use std::path::Path;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TokenizerConfig, VqTokenizer};
use crate::container;
use crate::error::Result;
use crate::nn::Module;

pub const VQ_KIND: [u8; 4] = *b"VQTK";
pub const VQ_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VqPayload {
    config: TokenizerConfig,
    params: Vec<(String, Vec<usize>, Vec<f64>)>,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    usage: Vec<u64>,
}

pub fn save_tokenizer(tok: &VqTokenizer, path: &Path) -> Result<()> {
    let mut snapshot = tok.clone();
    let payload = VqPayload {
        config: tok.config.clone(),
        params: snapshot.export_params(),
        norm_mean: tok.norm_mean.to_vec(),
        norm_std: tok.norm_std.to_vec(),
        usage: tok.codebook.usage.clone(),
    };
    container::write_container(path, VQ_KIND, VQ_VERSION, &payload)
}

pub fn load_tokenizer(path: &Path) -> Result<VqTokenizer> {
    let payload: VqPayload = container::read_container(path, VQ_KIND, VQ_VERSION)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tok = VqTokenizer::new(payload.config, &mut rng)?;
    tok.import_params(&payload.params)?;
    tok.norm_mean = Array1::from_vec(payload.norm_mean);
    tok.norm_std = Array1::from_vec(payload.norm_std);
    tok.codebook.usage = payload.usage;
    Ok(tok)
}
