//! Scorer persistence. Weights are stored as base64 of little-endian f64
//! bytes so the file round-trips bit-exactly.

use std::path::Path;

use augmenta_core::selector::{FeatureConfig, ScorerState};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::io::{read_json, write_json, IoError};

pub const FORMAT: &str = "augmenta-scorer-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerFile {
    pub format: String,
    pub feature_config: FeatureConfig,
    pub bias: f64,
    pub trained_on: String,
    pub best_epoch: usize,
    pub weights: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ScorerFileError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("unsupported scorer format `{0}`")]
    Format(String),
    #[error("weights are not valid base64 of f64 values: {0}")]
    Weights(String),
}

pub fn encode_weights(w: &[f64]) -> String {
    let bytes: Vec<u8> = w.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_weights(s: &str) -> Result<Vec<f64>, ScorerFileError> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| ScorerFileError::Weights(e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(ScorerFileError::Weights(format!("{} bytes", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn save_scorer(path: &Path, state: &ScorerState, best_epoch: usize) -> Result<(), ScorerFileError> {
    let file = ScorerFile {
        format: FORMAT.into(),
        feature_config: state.feature_config,
        bias: state.bias,
        trained_on: state.trained_on.clone(),
        best_epoch,
        weights: encode_weights(&state.weights),
    };
    Ok(write_json(path, &file)?)
}

pub fn load_scorer(path: &Path) -> Result<ScorerState, ScorerFileError> {
    let file: ScorerFile = read_json(path)?;
    if file.format != FORMAT {
        return Err(ScorerFileError::Format(file.format));
    }
    let state = ScorerState {
        weights: decode_weights(&file.weights)?,
        bias: file.bias,
        feature_config: file.feature_config,
        trained_on: file.trained_on,
    };
    state.check().map_err(|e| ScorerFileError::Weights(e.to_string()))?;
    Ok(state)
}
