//! Sensor fault detection and isolation built on learned one-step predictors.
//!
//! A recurrent or feed-forward model predicts every sensor one step ahead.
//! Residual norms are thresholded at a level calibrated on healthy data
//! ([`residuals`]), per-sample decisions are fused over a batch by a binomial
//! test ([`sfd`]), and after a detection the faulty sensors are isolated by
//! greedy closed-loop bias correction ([`sfi`]). [`eval`] holds the metrics
//! and experiment harness.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod predictor;
pub mod residuals;
pub mod scalar;
pub mod sfd;
pub mod sfi;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = numerics::Matrix<f64>;
pub type SensorSeries = dataset::SensorSeries<f64>;
pub type NormStats = dataset::NormStats<f64>;
pub type FaultSpec = dataset::FaultSpec<f64>;
pub type GruModel = predictor::GruModel<f64>;
pub type FfnnModel = predictor::FfnnModel<f64>;
pub type Model = predictor::Model<f64>;
pub type Checkpoint = predictor::Checkpoint<f64>;
