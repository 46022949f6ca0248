use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{Batch, MiNoise, Network};
use super::ModelError;
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, ParamStore, TensorRecord};
use crate::dataset::{Sample, SampleShape};
use crate::scalar::Scalar;

pub const MODEL_CHECKPOINT_VERSION: u32 = 1;

/// Serialized trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub shape: SampleShape,
    /// Identifier of the training data (e.g. a config hash).
    pub dataset: String,
    pub params: BTreeMap<String, TensorRecord>,
}

impl ModelCheckpoint {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = serde_json::to_vec(self)?;
        std::fs::write(path, bytes).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ck: Self = serde_json::from_slice(&bytes)?;
        if ck.version != MODEL_CHECKPOINT_VERSION {
            return Err(ModelError::CheckpointVersion(ck.version));
        }
        Ok(ck)
    }
}

impl<T: Scalar> Network<T> {
    pub fn to_checkpoint(&self, dataset: &str) -> ModelCheckpoint {
        ModelCheckpoint {
            version: MODEL_CHECKPOINT_VERSION,
            config: self.config.clone(),
            shape: self.shape,
            dataset: dataset.to_string(),
            params: self.params.to_records(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, ModelError> {
        let fresh = Self::new(&ck.config, ck.shape)?;
        let params = ParamStore::from_records(&ck.params)?;
        for (name, t) in fresh.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(ModelError::Shape(format!("checkpoint parameter `{name}` missing or misshapen"))),
            }
        }
        Ok(Self {
            config: ck.config.clone(),
            shape: ck.shape,
            params,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_nll: f64,
    /// Mean MI cross-entropy, empty when the MI term is off.
    pub train_mi: Option<f64>,
    pub val_ll: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// CSV file receiving one row per epoch.
    pub metrics_path: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters of the best validation epoch (the initialization when no
    /// epoch ran).
    pub network: Network<T>,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub best_val_ll: Option<f64>,
}

/// Mean per-sample log-likelihood of `samples` under `net`.
pub fn mean_log_likelihood<T: Scalar>(net: &Network<T>, samples: &[Sample]) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Empty("evaluation set"));
    }
    let mixtures = net.predict_samples(samples)?;
    let total: f64 = mixtures
        .iter()
        .zip(samples)
        .map(|(m, s)| m.log_likelihood((T::lit(s.target.0), T::lit(s.target.1))).to_f64_lossy())
        .sum();
    Ok(total / samples.len() as f64)
}

/// Mini-batch Adam on `train`, keeping the parameters with the best mean
/// validation log-likelihood.
pub fn train<T: Scalar>(
    config: &ModelConfig,
    shape: SampleShape,
    train: &[Sample],
    val: &[Sample],
    options: &TrainOptions,
) -> Result<TrainOutcome<T>, ModelError> {
    if train.is_empty() {
        return Err(ModelError::Empty("training set"));
    }
    if val.is_empty() {
        return Err(ModelError::Empty("validation set"));
    }
    let mut net = Network::<T>::new(config, shape)?;
    let mut writer = match &options.metrics_path {
        Some(path) => Some(csv::Writer::from_path(path).map_err(|e| ModelError::Csv(e.to_string()))?),
        None => None,
    };
    let adam = AdamConfig::with_lr(T::lit(config.lr));
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00_0000);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;
    let mut g = Graph::with_strict_finite(false);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut nll_sum, mut mi_sum, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for (batch_id, idx) in order.chunks(config.batch_size).enumerate() {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = Batch::from_samples(&refs, &net.shape, config.dt_scale)?;
            let noise = MiNoise::sample(&mut rng, batch.size, config.components, config.mi_sampling);
            g.reset();
            let bound = net.params.bind(&mut g);
            let loss = net.loss(&mut g, &bound, &batch, Some(&noise))?;
            let total = g.value(loss.total).item().to_f64_lossy();
            if !total.is_finite() {
                return Err(ModelError::Diverged { epoch, batch: batch_id });
            }
            let grads = g.backward(loss.total)?;
            let grads = bound.gradients(&grads, &net.params);
            if grads.values().any(|t| !t.is_finite()) {
                return Err(ModelError::Diverged { epoch, batch: batch_id });
            }
            adam_step(&mut net.params, &grads, &mut state, &adam)?;
            let w = batch.size as f64;
            loss_sum += total * w;
            nll_sum += g.value(loss.nll).item().to_f64_lossy() * w;
            if let Some(mi) = loss.mi {
                mi_sum += g.value(mi).item().to_f64_lossy() * w;
            }
            seen += batch.size;
        }
        let val_ll = mean_log_likelihood(&net, val)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_nll: nll_sum / seen as f64,
            train_mi: (config.effective_lambda() > 0.0).then(|| mi_sum / seen as f64),
            val_ll,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} nll {:.4} val_ll {:.4}",
            metrics.train_loss,
            metrics.train_nll,
            metrics.val_ll
        );
        if let Some(w) = writer.as_mut() {
            w.serialize(&metrics).map_err(|e| ModelError::Csv(e.to_string()))?;
            w.flush().map_err(|e| ModelError::Csv(e.to_string()))?;
        }
        history.push(metrics);
        if best.as_ref().is_none_or(|b| val_ll > b.1) {
            best = Some((epoch, val_ll, net.params.clone()));
        }
    }

    let (best_epoch, best_val_ll) = match best {
        Some((epoch, ll, params)) => {
            net.params = params;
            (Some(epoch), Some(ll))
        }
        None => (None, None),
    };
    Ok(TrainOutcome {
        network: net,
        history,
        best_epoch,
        best_val_ll,
    })
}
