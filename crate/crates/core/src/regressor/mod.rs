//! LSTM alarm forecaster.

mod gradcheck;
mod lstm;
mod train;

use serde::{Deserialize, Serialize};

pub use gradcheck::{gradient_check, numeric_gradient};
pub use lstm::{layer_param_counts, lstm_layer_params, param_count, LstmStack, DEFAULT_WIDTHS};
pub use train::{
    depth_sweep, predict_binary, predict_probabilities, threshold_probabilities, train, DepthRow, EpochRecord,
    ForecastOutput, TrainConfig,
};

use crate::error::{Error, Result};

pub const ARTIFACT_FORMAT: &str = "afc-lstm";
pub const ARTIFACT_VERSION: u32 = 1;

/// On-disk regressor: the model plus the threshold and a hash of the
/// training configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorArtifact {
    pub format: String,
    pub version: u32,
    pub decision_threshold: f64,
    pub config_hash: String,
    pub model: LstmStack,
}

impl RegressorArtifact {
    pub fn new(model: LstmStack, cfg: &TrainConfig) -> Self {
        Self {
            format: ARTIFACT_FORMAT.into(),
            version: ARTIFACT_VERSION,
            decision_threshold: cfg.decision_threshold,
            config_hash: cfg.hash(),
            model,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        if a.format != ARTIFACT_FORMAT || a.version != ARTIFACT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported regressor artifact {} v{}",
                a.format, a.version
            )));
        }
        let m = &a.model;
        if m.params().len() != param_count(m.widths(), m.steps(), m.features()) {
            return Err(Error::Parse("regressor artifact has the wrong parameter count".into()));
        }
        Ok(a)
    }
}
