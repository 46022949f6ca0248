//! Adversary-location predictor: detection and agent encoders, the
//! component-conditioned mixture decoder (or a wide-head baseline), the
//! component classifier for the MI term, and training.

mod config;
mod mixture;
mod network;
mod train;

pub use config::{MiSampling, ModelConfig};
pub use mixture::{Component, MixtureOutput, RHO_BOUND, SIGMA_FLOOR};
pub use network::{mixtures_from, Batch, LossVars, MiNoise, MixtureVars, Network};
pub use train::{
    mean_log_likelihood, train, EpochMetrics, ModelCheckpoint, TrainOptions, TrainOutcome, MODEL_CHECKPOINT_VERSION,
};

use crate::autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("unsupported model checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("metrics log: {0}")]
    Csv(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
