//! One-step-ahead predictors of all `S` channels: a GRU (the main model), a
//! windowed feed-forward baseline and a fixed linear predictor, plus the
//! covariance-penalized training loop and checkpoints.

mod checkpoint;
mod ffnn;
mod gru;
mod linear;
mod loss;
mod train;

use std::collections::VecDeque;

pub use checkpoint::{Checkpoint, Model, ModelKind, CHECKPOINT_FORMAT_VERSION};
pub use ffnn::FfnnModel;
pub use gru::GruModel;
pub use linear::LinearPredictor;
pub use loss::{
    disentangle_loss, loss_and_grad, loss_parts, mse_loss, offdiag_l1, prediction_covariance, targeted_loss,
    total_loss, LossMode, LossParts,
};
pub use train::{batch_loss_and_grad, evaluate, train, EpochRecord, EvalSummary, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Mutable per-run state of a predictor. GRUs use `hidden`, windowed models
/// use `window` (most recent input first).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictorState<T> {
    pub hidden: Vec<T>,
    pub window: VecDeque<Vec<T>>,
}

/// Anything that turns the stream `x_0, x_1, …` into predictions of the next sample.
pub trait Predictor<T: Scalar>: Send + Sync {
    fn n_sensors(&self) -> usize;

    fn initial_state(&self) -> PredictorState<T>;

    /// Consumes `x_{t−1}` and writes the prediction of `x_t` into `out`.
    /// Returns `false` while the model has not seen enough history.
    fn step(&self, input: &[T], state: &mut PredictorState<T>, out: &mut [T]) -> Result<bool>;
}

/// Models with a flat parameter vector and a batched forward/backward pass.
pub trait Trainable<T: Scalar>: Predictor<T> + Clone {
    type Tape;

    fn params(&self) -> &[T];
    fn params_mut(&mut self) -> &mut [T];

    /// Earliest time index that can be predicted from a series start.
    fn first_target(&self) -> usize;

    /// State carried between consecutive batches (GRU hidden state).
    fn initial_carry(&self) -> Vec<T>;

    /// Predictions of columns `t0..t1` of `x`, updating the carried state.
    fn forward_batch(&self, x: &Matrix<T>, t0: usize, t1: usize, carry: &mut Vec<T>)
        -> Result<(Matrix<T>, Self::Tape)>;

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂X̂` for the batch. The
    /// carried state entering the batch is treated as a constant.
    fn backward_batch(&self, tape: &Self::Tape, d_pred: &Matrix<T>, grad: &mut [T]);
}

/// How the model input is assembled during a rollout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedMode {
    /// Always feed the measured `x_{t−1}`.
    OpenLoop,
    /// From time `from` onward, channels in `channels` are fed the model's own
    /// previous prediction instead of the measurement.
    ClosedLoop { channels: Vec<usize>, from: usize },
}

/// Output of [`predict_series`]. Column `j` of each matrix belongs to time
/// `start + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRun<T> {
    pub start: usize,
    /// `x̂_t`.
    pub predictions: Matrix<T>,
    /// Input actually fed to produce `x̂_t`, i.e. the measured or fed-back `x_{t−1}`.
    pub inputs: Matrix<T>,
    /// Hidden state after producing `x̂_t` (zero rows for stateless models).
    pub hidden: Matrix<T>,
}

impl<T: Scalar> PredictionRun<T> {
    pub fn end(&self) -> usize {
        self.start + self.predictions.cols()
    }

    pub fn prediction_at(&self, t: usize) -> Option<Vec<T>> {
        (t >= self.start && t < self.end()).then(|| self.predictions.column(t - self.start))
    }
}

/// Rolls `model` over `values` (`S × N`) from `warmup_start` to `end`
/// (exclusive) and returns every prediction the model emits.
pub fn predict_series<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    values: &Matrix<T>,
    mode: &FeedMode,
    warmup_start: usize,
    end: usize,
) -> Result<PredictionRun<T>> {
    let (s, n) = values.shape();
    if s != model.n_sensors() {
        return Err(Error::shape("predict_series", model.n_sensors(), s));
    }
    if n < 2 || end > n || warmup_start + 1 >= end {
        return Err(Error::Precondition(format!(
            "rollout [{warmup_start}, {end}) invalid for a series of {n} samples"
        )));
    }
    let (feedback, from) = match mode {
        FeedMode::OpenLoop => (Vec::new(), usize::MAX),
        FeedMode::ClosedLoop { channels, from } => {
            let mut seen = vec![false; s];
            for &c in channels {
                if c >= s {
                    return Err(Error::OutOfRange { what: "feedback channel", index: c, len: s });
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(Error::Duplicate(c));
                }
            }
            (channels.clone(), *from)
        }
    };

    let mut state = model.initial_state();
    let mut input = vec![T::zero(); s];
    let mut out = vec![T::zero(); s];
    let mut prev_pred: Option<Vec<T>> = None;
    let mut preds = Vec::new();
    let mut inputs = Vec::new();
    let mut hidden = Vec::new();
    let mut start = None;
    for t in warmup_start + 1..end {
        values.column_into(t - 1, &mut input);
        if t > from {
            if let Some(p) = &prev_pred {
                for &c in &feedback {
                    input[c] = p[c];
                }
            }
        }
        if model.step(&input, &mut state, &mut out)? {
            start.get_or_insert(t);
            preds.extend_from_slice(&out);
            inputs.extend_from_slice(&input);
            hidden.extend_from_slice(&state.hidden);
            prev_pred = Some(out.clone());
        } else {
            prev_pred = None;
        }
    }
    let start = start.ok_or_else(|| Error::Precondition("rollout too short to emit any prediction".into()))?;
    let cols = end - start;
    let h = state.hidden.len();
    Ok(PredictionRun {
        start,
        predictions: Matrix::from_vec(cols, s, preds)?.transpose(),
        inputs: Matrix::from_vec(cols, s, inputs)?.transpose(),
        hidden: Matrix::from_vec(cols, h, hidden)?.transpose(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn series(s: usize, n: usize, seed: u64) -> Matrix<f64> {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(s, n, |_, _| rng.normal())
    }

    #[test]
    fn empty_feedback_equals_open_loop() {
        let m = GruModel::<f64>::new(3, 5, &mut Rng::new(1)).unwrap();
        let x = series(3, 40, 2);
        let open = predict_series(&m, &x, &FeedMode::OpenLoop, 0, 40).unwrap();
        let closed = predict_series(&m, &x, &FeedMode::ClosedLoop { channels: vec![], from: 10 }, 0, 40).unwrap();
        assert_eq!(open, closed);
        assert_eq!(open.start, 1);
        assert_eq!(open.predictions.cols(), 39);
    }

    #[test]
    fn all_channels_fed_back_is_autonomous() {
        let m = GruModel::<f64>::new(2, 4, &mut Rng::new(3)).unwrap();
        let x = series(2, 30, 4);
        let mut y = x.clone();
        for t in 12..30 {
            y.set_column(t, &[100.0, -100.0]);
        }
        let mode = FeedMode::ClosedLoop { channels: vec![0, 1], from: 10 };
        let a = predict_series(&m, &x, &mode, 0, 30).unwrap();
        let b = predict_series(&m, &y, &mode, 0, 30).unwrap();
        // after t = 11 the measurements never reach the model
        assert_eq!(a.predictions.columns(11, 29), b.predictions.columns(11, 29));
    }

    #[test]
    fn bad_channels_rejected() {
        let m = GruModel::<f64>::new(2, 4, &mut Rng::new(3)).unwrap();
        let x = series(2, 30, 4);
        let bad = FeedMode::ClosedLoop { channels: vec![2], from: 0 };
        assert!(matches!(predict_series(&m, &x, &bad, 0, 30), Err(Error::OutOfRange { .. })));
        let dup = FeedMode::ClosedLoop { channels: vec![1, 1], from: 0 };
        assert!(matches!(predict_series(&m, &x, &dup, 0, 30), Err(Error::Duplicate(1))));
    }

    #[test]
    fn ffnn_rollout_starts_after_window() {
        let m = FfnnModel::<f64>::new(2, 3, 4, &mut Rng::new(1)).unwrap();
        let x = series(2, 20, 5);
        let run = predict_series(&m, &x, &FeedMode::OpenLoop, 0, 20).unwrap();
        assert_eq!(run.start, 3);
        assert_eq!(run.hidden.rows(), 0);
        let mut via_batch = m.initial_carry();
        let (p, _) = m.forward_batch(&x, 3, 20, &mut via_batch).unwrap();
        assert_eq!(p, run.predictions);
    }

    #[test]
    fn gru_rollout_matches_batched_forward() {
        let m = GruModel::<f64>::new(3, 4, &mut Rng::new(8)).unwrap();
        let x = series(3, 25, 9);
        let run = predict_series(&m, &x, &FeedMode::OpenLoop, 0, 25).unwrap();
        let mut carry = m.initial_carry();
        let (p, _) = m.forward_batch(&x, 1, 25, &mut carry).unwrap();
        assert_eq!(p, run.predictions);
        assert_eq!(carry, run.hidden.column(23));
    }
}
