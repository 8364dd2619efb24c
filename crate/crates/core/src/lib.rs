//! Score-based generative modelling on a variance-exploding SDE, with an
//! encoder whose code conditions the score network.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod metrics;
pub mod models;
pub mod numcore;
pub mod objectives;
pub mod rng;
pub mod scalar;
pub mod sde;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::Real;

pub type Tensor = numcore::Tensor<f64>;
pub type Tape = numcore::Tape<f64>;
pub type AdamState = numcore::AdamState<f64>;
pub type SdeConfig = sde::SdeConfig<f64>;
pub type GaussianMixture = analytic::GaussianMixture<f64>;
pub type LabeledDataset = analytic::LabeledDataset<f64>;
pub type DatasetParams = analytic::DatasetParams<f64>;
pub type ScoreModel = models::ScoreModel<f64>;
pub type Encoder = models::Encoder<f64>;
pub type TimeEmbedding = models::TimeEmbedding<f64>;
pub type TimeWeighting = objectives::TimeWeighting<f64>;
pub type LossReport = objectives::LossReport<f64>;
pub type DecompositionReport = objectives::DecompositionReport<f64>;
pub type SilhouetteReport = metrics::SilhouetteReport<f64>;
pub type SweepRow = metrics::SweepRow<f64>;
pub type TrainSpec = train::TrainSpec<f64>;
pub type Trained = train::Trained<f64>;
pub type Trainer = train::Trainer<f64>;
