use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemv_acc, gemv_t_acc, outer_acc, sigmoid, Matrix, Rng};
use crate::scalar::Scalar;

use super::{Predictor, PredictorState, Trainable};

/// Feed-forward baseline: one sigmoid hidden layer over a look-back window
/// `[x_{t−1}, …, x_{t−w}]` (most recent first), linear output of `S` units.
///
/// Parameters are laid out as `[W_1, b_1, W_2, b_2]`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FfnnModel<T> {
    sensors: usize,
    window: usize,
    hidden: usize,
    params: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct FfnnStepCache<T> {
    u: Vec<T>,
    g: Vec<T>,
}

impl<T: Scalar> FfnnModel<T> {
    pub const DEFAULT_WINDOW: usize = 8;
    pub const DEFAULT_HIDDEN: usize = 30;

    /// Uniform initialization in `±1/√fan_in` per layer.
    pub fn new(sensors: usize, window: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::zeros(sensors, window, hidden)?;
        let b1 = 1.0 / ((sensors * window) as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let first = hidden * sensors * window + hidden;
        for (i, p) in m.params.iter_mut().enumerate() {
            let b = if i < first { b1 } else { b2 };
            *p = T::of(rng.uniform(-b, b));
        }
        Ok(m)
    }

    pub fn zeros(sensors: usize, window: usize, hidden: usize) -> Result<Self> {
        if sensors == 0 || window == 0 || hidden == 0 {
            return Err(Error::config("model", "sensors, window and hidden size must be positive"));
        }
        let n = Self::n_params(sensors, window, hidden);
        Ok(Self { sensors, window, hidden, params: vec![T::zero(); n] })
    }

    pub fn from_params(sensors: usize, window: usize, hidden: usize, params: Vec<T>) -> Result<Self> {
        let mut m = Self::zeros(sensors, window, hidden)?;
        if params.len() != m.params.len() {
            return Err(Error::shape("FfnnModel::from_params", m.params.len(), params.len()));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { context: "FFNN parameters".into(), index: i });
        }
        m.params = params;
        Ok(m)
    }

    pub fn n_params(sensors: usize, window: usize, hidden: usize) -> usize {
        hidden * sensors * window + hidden + sensors * hidden + sensors
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    fn split(&self) -> [std::ops::Range<usize>; 4] {
        let w1 = self.hidden * self.sensors * self.window;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.sensors * self.hidden;
        [0..w1, w1..b1, b1..w2, w2..w2 + self.sensors]
    }

    /// `x̂_t` from the stacked window `u = [x_{t−1}; …; x_{t−w}]`.
    pub fn ffnn_forward(&self, u: &[T], out: &mut [T]) -> Result<()> {
        if u.len() != self.sensors * self.window {
            return Err(Error::Precondition(format!(
                "FFNN window needs {} values, got {}",
                self.sensors * self.window,
                u.len()
            )));
        }
        let g = self.hidden_activations(u);
        self.output(&g, out);
        Ok(())
    }

    fn hidden_activations(&self, u: &[T]) -> Vec<T> {
        let [w1, b1, _, _] = self.split();
        let mut g = self.params[b1].to_vec();
        gemv_acc(&self.params[w1], u, &mut g);
        g.iter_mut().for_each(|v| *v = sigmoid(*v));
        g
    }

    fn output(&self, g: &[T], out: &mut [T]) {
        let [_, _, w2, b2] = self.split();
        out.copy_from_slice(&self.params[b2]);
        gemv_acc(&self.params[w2], g, out);
    }

    fn stack(&self, x: &Matrix<T>, t: usize, u: &mut [T]) {
        for k in 0..self.window {
            x.column_into(t - 1 - k, &mut u[k * self.sensors..(k + 1) * self.sensors]);
        }
    }
}

impl<T: Scalar> Predictor<T> for FfnnModel<T> {
    fn n_sensors(&self) -> usize {
        self.sensors
    }

    fn initial_state(&self) -> PredictorState<T> {
        PredictorState::default()
    }

    fn step(&self, input: &[T], state: &mut PredictorState<T>, out: &mut [T]) -> Result<bool> {
        if input.len() != self.sensors {
            return Err(Error::shape("FfnnModel::step", self.sensors, input.len()));
        }
        state.window.push_front(input.to_vec());
        state.window.truncate(self.window);
        if state.window.len() < self.window {
            return Ok(false);
        }
        let u: Vec<T> = state.window.iter().flatten().copied().collect();
        self.ffnn_forward(&u, out)?;
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "FFNN output".into(), index: i });
        }
        Ok(true)
    }
}

impl<T: Scalar> Trainable<T> for FfnnModel<T> {
    type Tape = Vec<FfnnStepCache<T>>;

    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn first_target(&self) -> usize {
        self.window
    }

    fn initial_carry(&self) -> Vec<T> {
        Vec::new()
    }

    fn forward_batch(
        &self,
        x: &Matrix<T>,
        t0: usize,
        t1: usize,
        _carry: &mut Vec<T>,
    ) -> Result<(Matrix<T>, Self::Tape)> {
        if t0 < self.window || t1 > x.cols() || t0 >= t1 || x.rows() != self.sensors {
            return Err(Error::Precondition(format!(
                "FFNN batch [{t0}, {t1}) invalid for {}×{} series with window {}",
                x.rows(),
                x.cols(),
                self.window
            )));
        }
        let mut preds = Matrix::zeros(self.sensors, t1 - t0);
        let mut tape = Vec::with_capacity(t1 - t0);
        let mut y = vec![T::zero(); self.sensors];
        for t in t0..t1 {
            let mut u = vec![T::zero(); self.sensors * self.window];
            self.stack(x, t, &mut u);
            let g = self.hidden_activations(&u);
            self.output(&g, &mut y);
            preds.set_column(t - t0, &y);
            tape.push(FfnnStepCache { u, g });
        }
        Ok((preds, tape))
    }

    fn backward_batch(&self, tape: &Self::Tape, d_pred: &Matrix<T>, grad: &mut [T]) {
        let [w1, b1, w2, b2] = self.split();
        let mut dy = vec![T::zero(); self.sensors];
        for (j, c) in tape.iter().enumerate() {
            d_pred.column_into(j, &mut dy);
            outer_acc(&mut grad[w2.clone()], &dy, &c.g);
            for (d, &v) in grad[b2.clone()].iter_mut().zip(&dy) {
                *d += v;
            }
            let mut dg = vec![T::zero(); self.hidden];
            gemv_t_acc(&self.params[w2.clone()], &dy, &mut dg);
            for (d, &g) in dg.iter_mut().zip(&c.g) {
                *d *= g * (T::one() - g);
            }
            outer_acc(&mut grad[w1.clone()], &dg, &c.u);
            for (d, &v) in grad[b1.clone()].iter_mut().zip(&dg) {
                *d += v;
            }
        }
    }
}
