//! Residual generation, a reflected Gaussian KDE of the healthy residual-norm
//! distribution and threshold calibration for a per-sample false-alarm rate.

mod kde;

pub use kde::{calibrate_threshold, Kde, MIN_KDE_SAMPLES};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{l2_norm, Matrix};
use crate::predictor::{predict_series, FeedMode, PredictionRun, Predictor};
use crate::scalar::Scalar;

/// `r_t = x_t − x̂_t`.
pub fn residual<T: Scalar>(x: &[T], xhat: &[T]) -> Vec<T> {
    debug_assert_eq!(x.len(), xhat.len());
    x.iter().zip(xhat).map(|(&a, &b)| a - b).collect()
}

/// `R_t = ‖r_t‖₂`.
pub fn residual_norm<T: Scalar>(r: &[T]) -> T {
    l2_norm(r)
}

/// Per-sensor residuals and their norms over a contiguous time range.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStream<T> {
    /// Time index of column 0.
    pub start: usize,
    pub r: Matrix<T>,
    pub norms: Vec<T>,
}

impl<T: Scalar> ResidualStream<T> {
    /// Residuals of the measured `values` against every prediction in `run`.
    pub fn from_run(values: &Matrix<T>, run: &PredictionRun<T>) -> Result<Self> {
        if values.rows() != run.predictions.rows() || run.end() > values.cols() {
            return Err(Error::shape(
                "ResidualStream::from_run",
                format!("{} rows, ≥ {} columns", run.predictions.rows(), run.end()),
                format!("{:?}", values.shape()),
            ));
        }
        let r = values.columns(run.start, run.end());
        let mut r = r;
        for (v, &p) in r.data_mut().iter_mut().zip(run.predictions.data()) {
            *v -= p;
        }
        Ok(Self::from_residuals(run.start, r))
    }

    pub fn from_residuals(start: usize, r: Matrix<T>) -> Self {
        let mut col = vec![T::zero(); r.rows()];
        let norms = (0..r.cols())
            .map(|t| {
                r.column_into(t, &mut col);
                residual_norm(&col)
            })
            .collect();
        Self { start, r, norms }
    }

    pub fn end(&self) -> usize {
        self.start + self.norms.len()
    }

    /// Norms for times `t0..t1`.
    pub fn norms_between(&self, t0: usize, t1: usize) -> Result<&[T]> {
        if t0 < self.start || t1 > self.end() || t0 > t1 {
            return Err(Error::OutOfRange { what: "residual stream", index: t1, len: self.end() });
        }
        Ok(&self.norms[t0 - self.start..t1 - self.start])
    }
}

/// Calibrated healthy-residual model persisted with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualProfile {
    pub gamma: f64,
    pub p_fa: f64,
    pub bandwidth: f64,
    pub n_samples: usize,
    /// SHA-256 of the calibration samples as little-endian `f64` bytes.
    pub samples_sha256: String,
}

impl ResidualProfile {
    /// Fits the KDE to healthy residual norms and solves for `γ`.
    pub fn calibrate(samples: &[f64], p_fa: f64) -> Result<Self> {
        let kde = Kde::fit(samples)?;
        let gamma = calibrate_threshold(&kde, p_fa)?;
        let drift = drift_score(samples);
        if drift > 0.5 {
            log::warn!("healthy residual norms drift by {drift:.2} standard deviations; threshold may be off");
        }
        Ok(Self {
            gamma,
            p_fa,
            bandwidth: kde.bandwidth(),
            n_samples: samples.len(),
            samples_sha256: samples_hash(samples),
        })
    }

    /// Calibrates on open-loop residual norms of `model` over healthy `x`,
    /// ignoring the first `skip` steps while the hidden state settles.
    pub fn from_model<T: Scalar>(
        model: &(dyn Predictor<T> + '_),
        x: &Matrix<T>,
        p_fa: f64,
        skip: usize,
    ) -> Result<Self> {
        let run = predict_series(model, x, &FeedMode::OpenLoop, 0, x.cols())?;
        let stream = ResidualStream::from_run(x, &run)?;
        let from = stream.start.max(skip);
        if from >= stream.end() {
            return Err(Error::Calibration(format!("no residuals left after skipping {skip} of {} steps", x.cols())));
        }
        let norms: Vec<f64> = stream.norms_between(from, stream.end())?.iter().map(|v| v.to_f64_lossy()).collect();
        Self::calibrate(&norms, p_fa)
    }
}

pub fn samples_hash(samples: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in samples {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Largest gap between rolling quarter means, in units of the overall
/// standard deviation. A rough stationarity diagnostic.
pub fn drift_score(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 8 {
        return 0.0;
    }
    let sd = crate::numerics::std_dev(samples);
    if sd == 0.0 {
        return 0.0;
    }
    let q = n / 4;
    let means: Vec<f64> = (0..4).map(|k| crate::numerics::mean(&samples[k * q..(k + 1) * q])).collect();
    let hi = means.iter().cloned().fold(f64::MIN, f64::max);
    let lo = means.iter().cloned().fold(f64::MAX, f64::min);
    (hi - lo) / sd
}
