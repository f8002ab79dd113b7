use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Matrix};
use crate::scalar::Scalar;

use super::loss::{loss_and_grad, loss_parts, offdiag_l1, prediction_covariance, LossMode, LossParts};
use super::Trainable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub target_sensor: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 8, batch_size: 110, lr: 1e-3, lambda: 0.01, target_sensor: None, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self, sensors: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "covariance needs at least 2 samples per batch"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and nonnegative"));
        }
        if let Some(s) = self.target_sensor {
            if s >= sensors {
                return Err(Error::config("target_sensor", format!("{s} out of range for {sensors} sensors")));
            }
        }
        Ok(())
    }

    pub fn loss_mode(&self) -> LossMode {
        match (self.lambda == 0.0, self.target_sensor) {
            (true, _) => LossMode::None,
            (false, Some(s)) => LossMode::Targeted(s),
            (false, None) => LossMode::Full,
        }
    }
}

/// Loss terms of a model run open-loop over a whole series, with the
/// covariance taken over all its predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mse: f64,
    pub penalty: f64,
    pub total: f64,
    /// `Σ_{i≠j} |C_ij|` of the prediction covariance.
    pub offdiag_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Zero for the untrained model.
    pub epoch: usize,
    pub mean_batch_loss: Option<f64>,
    pub train: EvalSummary,
    pub validation: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn initial(&self) -> &EpochRecord {
        &self.history[0]
    }

    pub fn last(&self) -> &EpochRecord {
        self.history.last().expect("history always holds the initial record")
    }
}

/// Loss of the predictions for columns `t0..t1` and its gradient with
/// respect to the model parameters. `carry` enters as a constant and leaves
/// holding the state after `t1 − 1`.
pub fn batch_loss_and_grad<T: Scalar, M: Trainable<T>>(
    model: &M,
    x: &Matrix<T>,
    t0: usize,
    t1: usize,
    carry: &mut Vec<T>,
    lambda: T,
    mode: LossMode,
) -> Result<(LossParts<T>, Vec<T>)> {
    let (preds, tape) = model.forward_batch(x, t0, t1, carry)?;
    let target = x.columns(t0, t1);
    let (parts, d_pred) = loss_and_grad(&target, &preds, lambda, mode)?;
    let mut grad = vec![T::zero(); model.params().len()];
    model.backward_batch(&tape, &d_pred, &mut grad);
    Ok((parts, grad))
}

/// Open-loop evaluation over the whole of `x`.
pub fn evaluate<T: Scalar, M: Trainable<T>>(
    model: &M,
    x: &Matrix<T>,
    lambda: f64,
    mode: LossMode,
) -> Result<EvalSummary> {
    let t0 = model.first_target();
    let mut carry = model.initial_carry();
    let (preds, _) = model.forward_batch(x, t0, x.cols(), &mut carry)?;
    let target = x.columns(t0, x.cols());
    let parts = loss_parts(&target, &preds, T::of(lambda), mode)?;
    let c = prediction_covariance(&preds)?;
    Ok(EvalSummary {
        mse: parts.mse.to_f64_lossy(),
        penalty: parts.penalty.to_f64_lossy(),
        total: parts.total.to_f64_lossy(),
        offdiag_l1: offdiag_l1(&c).to_f64_lossy(),
    })
}

/// Adam over contiguous minibatches of `batch_size` targets with BPTT
/// truncated at batch boundaries. Series must already be normalized.
pub fn train<T: Scalar, M: Trainable<T>>(
    model: &mut M,
    train: &Matrix<T>,
    validation: &Matrix<T>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate(model.n_sensors())?;
    let first = model.first_target();
    for (name, x) in [("train", train), ("validation", validation)] {
        if x.rows() != model.n_sensors() {
            return Err(Error::shape("train", model.n_sensors(), x.rows()));
        }
        if x.cols() < first + 2 {
            return Err(Error::Precondition(format!("{name} series too short: {} samples", x.cols())));
        }
    }
    let mode = config.loss_mode();
    let lambda = T::of(config.lambda);
    let mut adam = AdamState::new(model.params().len(), AdamConfig::with_lr(config.lr));
    let record = |model: &M, epoch, mean_batch_loss| -> Result<EpochRecord> {
        Ok(EpochRecord {
            epoch,
            mean_batch_loss,
            train: evaluate(model, train, config.lambda, mode)?,
            validation: evaluate(model, validation, config.lambda, mode)?,
        })
    };
    let mut history = vec![record(model, 0, None)?];

    for epoch in 1..=config.epochs {
        let mut carry = model.initial_carry();
        let mut sum = 0.0;
        let mut batches = 0;
        let mut t0 = first;
        while t0 + 2 <= train.cols() {
            let t1 = (t0 + config.batch_size).min(train.cols());
            let (parts, grad) = batch_loss_and_grad(model, train, t0, t1, &mut carry, lambda, mode)?;
            let loss = parts.total.to_f64_lossy();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, batch: batches, loss });
            }
            adam.step(model.params_mut(), &grad)?;
            sum += loss;
            batches += 1;
            t0 = t1;
        }
        let rec = record(model, epoch, Some(sum / batches as f64))?;
        log::info!(
            "epoch {epoch}: batch loss {:.5}, val mse {:.5}, val offdiag {:.4}",
            sum / batches as f64,
            rec.validation.mse,
            rec.validation.offdiag_l1
        );
        history.push(rec);
    }
    Ok(TrainReport { history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::predictor::{FfnnModel, GruModel};

    fn sine_series(n: usize) -> Matrix<f64> {
        let mut rng = Rng::new(11);
        Matrix::from_fn(2, n, |i, t| ((t as f64) * 0.1 + i as f64).sin() + 0.05 * rng.normal())
    }

    #[test]
    fn config_validation_and_mode() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr, c.lambda), (8, 110, 1e-3, 0.01));
        assert_eq!(c.loss_mode(), LossMode::Full);
        assert_eq!(TrainConfig { lambda: 0.0, ..c.clone() }.loss_mode(), LossMode::None);
        assert_eq!(TrainConfig { target_sensor: Some(1), ..c.clone() }.loss_mode(), LossMode::Targeted(1));
        assert!(TrainConfig { batch_size: 1, ..c.clone() }.validate(2).is_err());
        assert!(TrainConfig { epochs: 0, ..c.clone() }.validate(2).is_err());
        assert!(TrainConfig { lambda: -0.1, ..c.clone() }.validate(2).is_err());
        assert!(TrainConfig { target_sensor: Some(2), ..c }.validate(2).is_err());
    }

    #[test]
    fn gru_training_reduces_mse_and_is_deterministic() {
        let x = sine_series(800);
        let (tr, va) = (x.columns(0, 600), x.columns(600, 800));
        let cfg = TrainConfig { epochs: 3, lambda: 0.0, lr: 1e-2, ..TrainConfig::default() };
        let mut a = GruModel::new(2, 6, &mut Rng::new(1)).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &tr, &va, &cfg).unwrap();
        let rb = train(&mut b, &tr, &va, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.history.len(), 4);
        assert!(ra.last().train.mse < ra.initial().train.mse);
    }

    #[test]
    fn ffnn_training_reduces_mse() {
        let x = sine_series(600);
        let cfg = TrainConfig { epochs: 3, lambda: 0.01, lr: 1e-2, ..TrainConfig::default() };
        let mut m = FfnnModel::new(2, 4, 8, &mut Rng::new(2)).unwrap();
        let r = train(&mut m, &x.columns(0, 500), &x.columns(500, 600), &cfg).unwrap();
        assert!(r.last().train.mse < r.initial().train.mse);
    }

    #[test]
    fn divergence_is_located() {
        let mut x = sine_series(400);
        x.set(0, 250, 1e300);
        let cfg = TrainConfig { epochs: 1, lambda: 0.0, ..TrainConfig::default() };
        let mut m = GruModel::new(2, 3, &mut Rng::new(1)).unwrap();
        let err = train(&mut m, &x, &sine_series(100), &cfg).unwrap_err();
        assert!(err.is_numeric(), "{err}");
    }
}
