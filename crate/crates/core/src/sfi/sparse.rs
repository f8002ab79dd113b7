use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseSolveConfig {
    pub eta: f64,
    pub lr: f64,
    pub iterations: usize,
}

impl Default for SparseSolveConfig {
    fn default() -> Self {
        Self { eta: 1.0, lr: 0.1, iterations: 30 }
    }
}

impl SparseSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", "must be finite and nonnegative"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        Ok(())
    }
}

/// One bias per sensor minimizing `Σ_t ‖x̂_t − x_t − Δ‖² + η‖Δ‖₁`, by Adam
/// from `Δ = 0` with the zero subgradient of `|·|` at the origin.
pub fn sparse_bias<T: Scalar>(xhat: &Matrix<T>, x: &Matrix<T>, config: &SparseSolveConfig) -> Result<Vec<T>> {
    config.validate()?;
    if xhat.shape() != x.shape() {
        return Err(Error::shape("sparse_bias", format!("{:?}", xhat.shape()), format!("{:?}", x.shape())));
    }
    let (s, n) = x.shape();
    if n == 0 {
        return Err(Error::Precondition("sparse_bias over an empty window".into()));
    }
    // the objective only depends on the data through the per-sensor mean gap
    let nf = T::of_usize(n);
    let gap: Vec<T> =
        (0..s).map(|i| xhat.row(i).iter().zip(x.row(i)).fold(T::zero(), |acc, (&a, &b)| acc + (a - b)) / nf).collect();
    let eta = T::of(config.eta);
    let two = T::of(2.0);
    let mut delta = vec![T::zero(); s];
    let mut adam = AdamState::new(s, AdamConfig::with_lr(config.lr));
    let mut grad = vec![T::zero(); s];
    for _ in 0..config.iterations {
        for i in 0..s {
            let sign = if delta[i] > T::zero() {
                T::one()
            } else if delta[i] < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            grad[i] = two * nf * (delta[i] - gap[i]) + eta * sign;
        }
        adam.step(&mut delta, &grad)?;
    }
    Ok(delta)
}

/// Exact minimizer of the separable problem: `soft(mean gap, η / 2n)`.
pub fn soft_threshold_bias<T: Scalar>(xhat: &Matrix<T>, x: &Matrix<T>, eta: f64) -> Vec<T> {
    let n = x.cols();
    let thr = T::of(eta / (2.0 * n as f64));
    (0..x.rows())
        .map(|i| {
            let g = xhat.row(i).iter().zip(x.row(i)).fold(T::zero(), |acc, (&a, &b)| acc + (a - b)) / T::of_usize(n);
            if g > thr {
                g - thr
            } else if g < -thr {
                g + thr
            } else {
                T::zero()
            }
        })
        .collect()
}
