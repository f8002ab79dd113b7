//! Sensor time series: ingestion, normalization, chronological splitting,
//! synthetic generation and additive bias-fault injection.

mod csv_io;
mod fault;
mod normalize;
mod split;
mod synth;

pub use csv_io::{load_csv, save_csv};
pub use fault::{inject_fault, offset_to_delta, offsets_to_delta, FaultSpec};
pub use normalize::{fit_normalizer, NormStats};
pub use split::{split, SplitSpec};
pub use synth::{gen_synthetic, simulate_var1, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// `S` channels sampled at `N` time-ordered instants, stored `S × N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SensorSeries<T> {
    values: Matrix<T>,
    channel_names: Vec<String>,
    time: Vec<f64>,
    sample_period: Option<f64>,
}

impl<T: Scalar> SensorSeries<T> {
    /// Wraps an `S × N` matrix; time stamps default to `0..N`.
    pub fn new(values: Matrix<T>, channel_names: Vec<String>) -> Result<Self> {
        let time = (0..values.cols()).map(|t| t as f64).collect();
        Self::with_time(values, channel_names, time)
    }

    pub fn with_time(values: Matrix<T>, channel_names: Vec<String>, time: Vec<f64>) -> Result<Self> {
        if values.rows() < 1 {
            return Err(Error::Precondition("series needs at least one channel".into()));
        }
        if values.cols() < 2 {
            return Err(Error::Precondition("series needs at least two samples".into()));
        }
        if channel_names.len() != values.rows() {
            return Err(Error::shape("SensorSeries", values.rows(), channel_names.len()));
        }
        if time.len() != values.cols() {
            return Err(Error::shape("SensorSeries time", values.cols(), time.len()));
        }
        if let Some(index) = values.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: "sensor values".into(), index });
        }
        let sample_period = if time.len() >= 2 { Some(time[1] - time[0]) } else { None };
        Ok(Self { values, channel_names, time, sample_period })
    }

    /// Default channel names `s0, s1, …`.
    pub fn from_matrix(values: Matrix<T>) -> Result<Self> {
        let names = (0..values.rows()).map(|i| format!("s{i}")).collect();
        Self::new(values, names)
    }

    #[inline]
    pub fn n_sensors(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn n_samples(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn sample_period(&self) -> Option<f64> {
        self.sample_period
    }

    /// Samples `start..end` as a new series (time stamps preserved).
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_samples() {
            return Err(Error::OutOfRange { what: "series slice end", index: end, len: self.n_samples() });
        }
        Self::with_time(self.values.columns(start, end), self.channel_names.clone(), self.time[start..end].to_vec())
    }

    /// Same metadata, new values of identical shape.
    pub fn with_values(&self, values: Matrix<T>) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::shape(
                "SensorSeries::with_values",
                format!("{:?}", self.values.shape()),
                format!("{:?}", values.shape()),
            ));
        }
        Self::with_time(values, self.channel_names.clone(), self.time.clone())
    }

    /// Sample mean of every channel.
    pub fn channel_means(&self) -> Vec<T> {
        (0..self.n_sensors()).map(|i| crate::numerics::mean(self.values.row(i))).collect()
    }

    pub fn cast<U: Scalar>(&self) -> SensorSeries<U> {
        SensorSeries {
            values: self.values.cast(),
            channel_names: self.channel_names.clone(),
            time: self.time.clone(),
            sample_period: self.sample_period,
        }
    }
}
