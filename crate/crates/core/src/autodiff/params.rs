use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::{Tensor, TensorRecord};
use super::AutodiffError;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count over all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Scalar count over tensors whose name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weight matrix.
    pub fn init_weight(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data).unwrap());
    }

    pub fn init_bias(&mut self, name: &str, len: usize) {
        self.insert(name, Tensor::zeros(&[len]));
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), g.param(t.clone())))
                .collect(),
        }
    }

    /// Records every tensor as a constant, for inference.
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), g.constant(t.clone())))
                .collect(),
        }
    }

    pub fn to_records(&self) -> BTreeMap<String, TensorRecord> {
        self.tensors
            .iter()
            .map(|(k, t)| (k.clone(), t.to_record()))
            .collect()
    }

    pub fn from_records(records: &BTreeMap<String, TensorRecord>) -> Result<Self, AutodiffError> {
        let mut store = Self::new();
        for (k, r) in records {
            store.insert(k.clone(), Tensor::from_record(r)?);
        }
        Ok(store)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), AutodiffError> {
        let file = ParamFile {
            version: CHECKPOINT_VERSION,
            params: self.to_records(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, AutodiffError> {
        let file: ParamFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(AutodiffError::CheckpointVersion(file.version));
        }
        Self::from_records(&file.params)
    }
}

/// Versioned on-disk parameter map: name -> shape + row-major values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamFile {
    pub version: u32,
    pub params: BTreeMap<String, TensorRecord>,
}

/// Graph handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var, AutodiffError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AutodiffError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Per-parameter gradients, zero-filled for parameters the output ignores.
    pub fn gradients<T: Scalar>(
        &self,
        grads: &Gradients<T>,
        store: &ParamStore<T>,
    ) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let shape = store.get(k).map_or(vec![], |t| t.shape().to_vec());
                (k.clone(), grads.get_or_zeros(v, &shape))
            })
            .collect()
    }
}
