use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParams, TrainedModel, TrainingMeta};
use crate::features::LocalityConfig;
use crate::netlist::GateKind;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    vocab: Vec<String>,
    locality: LocalityConfig,
    params: ModelParams,
    training: TrainingMeta,
}

pub fn model_to_json(model: &TrainedModel) -> String {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        vocab: model.vocab.clone(),
        locality: model.locality.clone(),
        params: model.params.clone(),
        training: model.meta.clone(),
    };
    serde_json::to_string_pretty(&file).expect("model serializes")
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, model_to_json(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel, ModelError> {
    let text = std::fs::read_to_string(path)?;
    load_model_str(&text)
}

pub fn load_model_str(text: &str) -> Result<TrainedModel, ModelError> {
    let corrupt = |m: String| ModelError::CorruptFile(m);
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    let vocab: Vec<String> = GateKind::VOCAB.iter().map(|k| k.name().to_string()).collect();
    if file.vocab != vocab {
        return Err(corrupt(format!("unexpected gate vocabulary {:?}", file.vocab)));
    }
    if file.locality.gates == 0 || file.locality.feature_len() != file.params.dims.input {
        return Err(corrupt("locality does not match the input width".into()));
    }
    file.params.validate().map_err(|e| corrupt(e.to_string()))?;
    for t in file.params.tensors() {
        if t.data().len() != t.rows() * t.cols() {
            return Err(corrupt("tensor data length does not match its shape".into()));
        }
    }
    Ok(TrainedModel { params: file.params, locality: file.locality, vocab: file.vocab, meta: file.training })
}
