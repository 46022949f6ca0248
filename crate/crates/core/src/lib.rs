//! Pursuit-evasion simulation and adversary-location prediction.
//!
//! The simulator ([`sim`], [`policies`]) produces rollouts ([`dataset`]) on
//! which a mixture-density predictor ([`model`], built on [`autodiff`]) is
//! trained and scored ([`eval`]). Numeric types are generic over
//! [`scalar::Scalar`]; the aliases below fix them to `f64`.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod policies;
pub mod scalar;
pub mod sim;

pub use config::{ConfigError, RunConfig};

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type ParamStore = autodiff::ParamStore<f64>;
pub type Mixture = model::MixtureOutput<f64>;
pub type Network = model::Network<f64>;

/// Single-precision variants.
pub mod f32 {
    pub type Tensor = crate::autodiff::Tensor<f32>;
    pub type Graph = crate::autodiff::Graph<f32>;
    pub type ParamStore = crate::autodiff::ParamStore<f32>;
    pub type Mixture = crate::model::MixtureOutput<f32>;
    pub type Network = crate::model::Network<f32>;
}
