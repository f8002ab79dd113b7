use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};
use crate::scalar::Scalar;

use super::{Predictor, PredictorState};

/// Fixed predictor `x̂_t = A x_{t−1}`, the optimal one-step predictor of a
/// VAR(1) system with transition `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor<T> {
    a: Matrix<T>,
}

impl<T: Scalar> LinearPredictor<T> {
    pub fn new(a: Matrix<T>) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::shape("LinearPredictor", "square matrix", format!("{:?}", a.shape())));
        }
        Ok(Self { a })
    }

    pub fn transition(&self) -> &Matrix<T> {
        &self.a
    }
}

impl<T: Scalar> Predictor<T> for LinearPredictor<T> {
    fn n_sensors(&self) -> usize {
        self.a.rows()
    }

    fn initial_state(&self) -> PredictorState<T> {
        PredictorState::default()
    }

    fn step(&self, input: &[T], _state: &mut PredictorState<T>, out: &mut [T]) -> Result<bool> {
        if input.len() != self.a.cols() {
            return Err(Error::shape("LinearPredictor::step", self.a.cols(), input.len()));
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.a.row(i), input);
        }
        Ok(true)
    }
}
