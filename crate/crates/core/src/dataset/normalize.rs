use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean, std_dev, Matrix};
use crate::scalar::Scalar;

use super::SensorSeries;

/// Per-channel z-score statistics fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

/// Fits channel means and sample standard deviations; constant channels are rejected.
pub fn fit_normalizer<T: Scalar>(train: &SensorSeries<T>) -> Result<NormStats<T>> {
    if train.n_samples() < 2 {
        return Err(Error::Precondition("normalizer needs two samples".into()));
    }
    let mut stats =
        NormStats { mean: Vec::with_capacity(train.n_sensors()), std: Vec::with_capacity(train.n_sensors()) };
    for i in 0..train.n_sensors() {
        let row = train.values().row(i);
        let sd = std_dev(row);
        if !(sd > T::zero()) {
            return Err(Error::config(format!("channel {} ({})", i, train.channel_names()[i]), "zero variance"));
        }
        stats.mean.push(mean(row));
        stats.std.push(sd);
    }
    Ok(stats)
}

impl<T: Scalar> NormStats<T> {
    pub fn n_sensors(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, series: &SensorSeries<T>) -> Result<()> {
        if series.n_sensors() != self.n_sensors() {
            return Err(Error::shape("normalizer", self.n_sensors(), series.n_sensors()));
        }
        Ok(())
    }

    pub fn apply(&self, series: &SensorSeries<T>) -> Result<SensorSeries<T>> {
        self.check(series)?;
        let v = series.values();
        let m = Matrix::from_fn(v.rows(), v.cols(), |i, j| (v.get(i, j) - self.mean[i]) / self.std[i]);
        series.with_values(m)
    }

    pub fn invert(&self, series: &SensorSeries<T>) -> Result<SensorSeries<T>> {
        self.check(series)?;
        let v = series.values();
        let m = Matrix::from_fn(v.rows(), v.cols(), |i, j| v.get(i, j) * self.std[i] + self.mean[i]);
        series.with_values(m)
    }

    /// Expresses a raw-unit bias vector in normalized units.
    pub fn delta_to_normalized(&self, delta: &[T]) -> Vec<T> {
        delta.iter().zip(&self.std).map(|(&d, &s)| d / s).collect()
    }
}
