//! β-weighted variational continual learning for multi-head mean-field
//! Gaussian Bayesian neural network classifiers.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar type to `f64`, with `*32` variants for `f32`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bnn;
pub mod cli;
pub mod continual;
pub mod data;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod numerics;
pub mod stats;

pub use error::{Error, Result};
pub use numerics::Real;

pub type DenseMatrix = numerics::Matrix<f64>;
pub type Dataset = data::TaskDataset<f64>;
pub type Split = data::SplitDataset<f64>;
pub type Sequence = data::TaskSequence<f64>;
pub type Posterior = bnn::VariationalPosterior<f64>;
pub type Predictive = inference::PredictiveDistribution<f64>;
pub type Accuracies = metrics::AccuracyMatrix<f64>;

pub type DenseMatrix32 = numerics::Matrix<f32>;
pub type Dataset32 = data::TaskDataset<f32>;
pub type Split32 = data::SplitDataset<f32>;
pub type Sequence32 = data::TaskSequence<f32>;
pub type Posterior32 = bnn::VariationalPosterior<f32>;
pub type Predictive32 = inference::PredictiveDistribution<f32>;
