//! Model checkpoint: config, parameters, and the tokenizer artifacts the
//! model was trained against.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{M3ptModel, ModelConfig};
use crate::container;
use crate::error::Result;
use crate::nn::Module;
use crate::signal::SegmentConfig;

pub const MODEL_KIND: [u8; 4] = *b"M3TF";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelPayload {
    config: ModelConfig,
    /// Windowing the model was trained under; evaluation must reuse it.
    segment: SegmentConfig,
    params: Vec<(String, Vec<usize>, Vec<f64>)>,
    /// (modality name, checkpoint path) pairs for the frozen tokenizers.
    tokenizer_refs: Vec<(String, String)>,
}

pub fn save_model(
    model: &M3ptModel,
    segment: &SegmentConfig,
    tokenizer_refs: &[(String, String)],
    path: &Path,
) -> Result<()> {
    let mut snapshot = model.clone();
    let payload = ModelPayload {
        config: model.config.clone(),
        segment: *segment,
        params: snapshot.export_params(),
        tokenizer_refs: tokenizer_refs.to_vec(),
    };
    container::write_container(path, MODEL_KIND, MODEL_VERSION, &payload)
}

pub fn load_model(path: &Path) -> Result<(M3ptModel, SegmentConfig, Vec<(String, String)>)> {
    let payload: ModelPayload = container::read_container(path, MODEL_KIND, MODEL_VERSION)?;
    let mut model = M3ptModel::new(payload.config, 0)?;
    model.import_params(&payload.params)?;
    Ok((model, payload.segment, payload.tokenizer_refs))
}
