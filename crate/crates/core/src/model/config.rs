use serde::{Deserialize, Serialize};

/// How the MI term draws component labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiSampling {
    /// One uniformly drawn component per example.
    #[default]
    Single,
    /// Every component for every example.
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of mixture components G.
    pub components: usize,
    pub hidden: usize,
    /// Size of each encoder output.
    pub embed: usize,
    /// Weight of the MI cross-entropy term.
    pub lambda: f64,
    pub use_gnn: bool,
    pub use_mi: bool,
    pub use_omega_mm: bool,
    pub mi_sampling: MiSampling,
    /// Prediction horizon T in steps.
    pub horizon: u32,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Divisor applied to detection ages before they enter the encoder.
    pub dt_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            components: 4,
            hidden: 64,
            embed: 64,
            lambda: 0.1,
            use_gnn: true,
            use_mi: true,
            use_omega_mm: true,
            mi_sampling: MiSampling::Single,
            horizon: 0,
            lr: 1e-3,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            dt_scale: 60.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.components == 0 {
            return Err("model.components must be at least 1".into());
        }
        if self.hidden == 0 || self.embed == 0 {
            return Err("model.hidden and model.embed must be positive".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(format!("model.lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0) {
            return Err(format!("model.lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return Err("model.batch_size must be positive".into());
        }
        if !(self.dt_scale > 0.0) {
            return Err("model.dt_scale must be positive".into());
        }
        Ok(())
    }

    /// MI weight actually applied to the loss.
    pub fn effective_lambda(&self) -> f64 {
        if self.use_mi {
            self.lambda
        } else {
            0.0
        }
    }
}
