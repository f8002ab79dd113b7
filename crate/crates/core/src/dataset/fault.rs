use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{NormStats, SensorSeries};

/// Additive bias `Δ` (raw sensor units) active from sample `onset` onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FaultSpec<T> {
    pub delta: Vec<T>,
    pub onset: usize,
}

impl<T: Scalar> FaultSpec<T> {
    /// Channels with a nonzero bias, ascending.
    pub fn faulty_channels(&self) -> Vec<usize> {
        self.delta.iter().enumerate().filter(|(_, d)| **d != T::zero()).map(|(i, _)| i).collect()
    }

    pub fn negated(&self) -> Self {
        Self { delta: self.delta.iter().map(|&d| -d).collect(), onset: self.onset }
    }
}

/// `x̃_t = x_t + Δ` for every `t ≥ onset`; earlier samples are untouched.
pub fn inject_fault<T: Scalar>(series: &SensorSeries<T>, spec: &FaultSpec<T>) -> Result<SensorSeries<T>> {
    if spec.delta.len() != series.n_sensors() {
        return Err(Error::shape("inject_fault", series.n_sensors(), spec.delta.len()));
    }
    if spec.onset >= series.n_samples() {
        return Err(Error::OutOfRange { what: "fault onset", index: spec.onset, len: series.n_samples() });
    }
    if let Some(index) = spec.delta.iter().position(|d| !d.is_finite()) {
        return Err(Error::NonFinite { context: "fault delta".into(), index });
    }
    let mut values = series.values().clone();
    for (i, &d) in spec.delta.iter().enumerate() {
        if d == T::zero() {
            continue;
        }
        for v in &mut values.row_mut(i)[spec.onset..] {
            *v += d;
        }
    }
    series.with_values(values)
}

/// Single-channel bias `Δ* = β·x̄ⁱ`, where `x̄ⁱ` is the channel's training mean.
pub fn offset_to_delta<T: Scalar>(beta: T, channel: usize, stats: &NormStats<T>, onset: usize) -> Result<FaultSpec<T>> {
    offsets_to_delta(beta, &[channel], stats, onset)
}

/// Same offset level applied to several channels, each scaled by its own mean.
pub fn offsets_to_delta<T: Scalar>(
    beta: T,
    channels: &[usize],
    stats: &NormStats<T>,
    onset: usize,
) -> Result<FaultSpec<T>> {
    if !(beta >= T::zero()) {
        return Err(Error::config("beta", "offset level must be nonnegative"));
    }
    let s = stats.n_sensors();
    let mut delta = vec![T::zero(); s];
    for &c in channels {
        if c >= s {
            return Err(Error::OutOfRange { what: "fault channel", index: c, len: s });
        }
        delta[c] = beta * stats.mean[c];
    }
    Ok(FaultSpec { delta, onset })
}
