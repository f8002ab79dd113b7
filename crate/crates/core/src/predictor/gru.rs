use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemv_acc, gemv_t_acc, outer_acc, sigmoid, Matrix, Rng};
use crate::scalar::Scalar;

use super::{Predictor, PredictorState, Trainable};

/// Offsets of each tensor inside the flat parameter vector, laid out as
/// `[W_z, W_r, W_n, U_z, U_r, U_n, b_z, b_r, b_n, W_o, b_o]`, all row-major.
#[derive(Debug, Clone, Copy)]
struct Layout {
    s: usize,
    h: usize,
}

impl Layout {
    fn w(&self, g: usize) -> std::ops::Range<usize> {
        let n = self.h * self.s;
        g * n..(g + 1) * n
    }
    fn u(&self, g: usize) -> std::ops::Range<usize> {
        let base = 3 * self.h * self.s;
        let n = self.h * self.h;
        base + g * n..base + (g + 1) * n
    }
    fn b(&self, g: usize) -> std::ops::Range<usize> {
        let base = 3 * self.h * self.s + 3 * self.h * self.h;
        base + g * self.h..base + (g + 1) * self.h
    }
    fn wo(&self) -> std::ops::Range<usize> {
        let base = 3 * self.h * (self.s + self.h + 1);
        base..base + self.s * self.h
    }
    fn bo(&self) -> std::ops::Range<usize> {
        let base = 3 * self.h * (self.s + self.h + 1) + self.s * self.h;
        base..base + self.s
    }
    fn total(&self) -> usize {
        3 * self.h * (self.s + self.h + 1) + self.s * self.h + self.s
    }
}

const Z: usize = 0;
const R: usize = 1;
const N: usize = 2;

/// Single-layer GRU with a linear read-out: from the measured `x_{t−1}` and
/// the hidden state it predicts `x_t`.
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// n  = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// x̂  = W_o h' + b_o
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GruModel<T> {
    sensors: usize,
    hidden: usize,
    params: Vec<T>,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct GruStepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
    h: Vec<T>,
}

impl<T: Scalar> GruModel<T> {
    pub const DEFAULT_HIDDEN: usize = 32;

    /// Uniform initialization in `±1/√hidden`.
    pub fn new(sensors: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        check_dims(sensors, hidden)?;
        let bound = 1.0 / (hidden as f64).sqrt();
        let layout = Layout { s: sensors, h: hidden };
        let params = (0..layout.total()).map(|_| T::of(rng.uniform(-bound, bound))).collect();
        Ok(Self { sensors, hidden, params })
    }

    pub fn zeros(sensors: usize, hidden: usize) -> Result<Self> {
        check_dims(sensors, hidden)?;
        let n = Layout { s: sensors, h: hidden }.total();
        Ok(Self { sensors, hidden, params: vec![T::zero(); n] })
    }

    pub fn from_params(sensors: usize, hidden: usize, params: Vec<T>) -> Result<Self> {
        check_dims(sensors, hidden)?;
        let n = Layout { s: sensors, h: hidden }.total();
        if params.len() != n {
            return Err(Error::shape("GruModel::from_params", n, params.len()));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { context: "GRU parameters".into(), index: i });
        }
        Ok(Self { sensors, hidden, params })
    }

    pub fn n_params(sensors: usize, hidden: usize) -> usize {
        Layout { s: sensors, h: hidden }.total()
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    fn layout(&self) -> Layout {
        Layout { s: self.sensors, h: self.hidden }
    }

    /// Mutable view of one named tensor, for hand-built models in tests and
    /// examples. `name` is one of `w_z w_r w_n u_z u_r u_n b_z b_r b_n w_o b_o`.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let l = self.layout();
        let range = match name {
            "w_z" => l.w(Z),
            "w_r" => l.w(R),
            "w_n" => l.w(N),
            "u_z" => l.u(Z),
            "u_r" => l.u(R),
            "u_n" => l.u(N),
            "b_z" => l.b(Z),
            "b_r" => l.b(R),
            "b_n" => l.b(N),
            "w_o" => l.wo(),
            "b_o" => l.bo(),
            _ => return None,
        };
        Some(&mut self.params[range])
    }

    /// One recurrence step. Writes the new hidden state into `h_out` and the
    /// prediction into `y_out`.
    pub fn gru_step(&self, x: &[T], h_prev: &[T], h_out: &mut [T], y_out: &mut [T]) -> Result<()> {
        if x.len() != self.sensors || h_prev.len() != self.hidden {
            return Err(Error::shape(
                "gru_step",
                format!("input {} / hidden {}", self.sensors, self.hidden),
                format!("input {} / hidden {}", x.len(), h_prev.len()),
            ));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "GRU input".into(), index: i });
        }
        let c = self.cell(x, h_prev)?;
        h_out.copy_from_slice(&c.h);
        self.readout(&c.h, y_out);
        Ok(())
    }

    fn cell(&self, x: &[T], h_prev: &[T]) -> Result<GruStepCache<T>> {
        let l = self.layout();
        let p = &self.params;
        let hsz = self.hidden;
        let mut z = p[l.b(Z)].to_vec();
        let mut r = p[l.b(R)].to_vec();
        let mut a_n = p[l.b(N)].to_vec();
        gemv_acc(&p[l.w(Z)], x, &mut z);
        gemv_acc(&p[l.u(Z)], h_prev, &mut z);
        gemv_acc(&p[l.w(R)], x, &mut r);
        gemv_acc(&p[l.u(R)], h_prev, &mut r);
        for v in z.iter_mut() {
            *v = sigmoid(*v);
        }
        for v in r.iter_mut() {
            *v = sigmoid(*v);
        }
        check_gate(&z, "GRU update gate")?;
        check_gate(&r, "GRU reset gate")?;
        let rh: Vec<T> = r.iter().zip(h_prev).map(|(&a, &b)| a * b).collect();
        gemv_acc(&p[l.w(N)], x, &mut a_n);
        gemv_acc(&p[l.u(N)], &rh, &mut a_n);
        let n: Vec<T> = a_n.iter().map(|v| v.tanh()).collect();
        check_gate(&n, "GRU candidate state")?;
        let h: Vec<T> = (0..hsz).map(|k| (T::one() - z[k]) * n[k] + z[k] * h_prev[k]).collect();
        Ok(GruStepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), z, r, n, h })
    }

    fn readout(&self, h: &[T], y: &mut [T]) {
        let l = self.layout();
        y.copy_from_slice(&self.params[l.bo()]);
        gemv_acc(&self.params[l.wo()], h, y);
    }

    /// Backward through one step. `dh` holds `∂L/∂h'` (including the read-out
    /// contribution) on entry and `∂L/∂h_prev` on exit.
    fn step_backward(&self, c: &GruStepCache<T>, dh: &mut [T], grad: &mut [T]) {
        let l = self.layout();
        let p = &self.params;
        let hsz = self.hidden;
        let one = T::one();
        let mut da_z = vec![T::zero(); hsz];
        let mut da_n = vec![T::zero(); hsz];
        let mut dh_prev = vec![T::zero(); hsz];
        for k in 0..hsz {
            let dz = dh[k] * (c.h_prev[k] - c.n[k]);
            let dn = dh[k] * (one - c.z[k]);
            dh_prev[k] = dh[k] * c.z[k];
            da_z[k] = dz * c.z[k] * (one - c.z[k]);
            da_n[k] = dn * (one - c.n[k] * c.n[k]);
        }
        let rh: Vec<T> = c.r.iter().zip(&c.h_prev).map(|(&a, &b)| a * b).collect();
        outer_acc(&mut grad[l.w(N)], &da_n, &c.x);
        outer_acc(&mut grad[l.u(N)], &da_n, &rh);
        add_into(&mut grad[l.b(N)], &da_n);
        let mut drh = vec![T::zero(); hsz];
        gemv_t_acc(&p[l.u(N)], &da_n, &mut drh);
        let mut da_r = vec![T::zero(); hsz];
        for k in 0..hsz {
            dh_prev[k] += drh[k] * c.r[k];
            let dr = drh[k] * c.h_prev[k];
            da_r[k] = dr * c.r[k] * (one - c.r[k]);
        }
        outer_acc(&mut grad[l.w(Z)], &da_z, &c.x);
        outer_acc(&mut grad[l.u(Z)], &da_z, &c.h_prev);
        add_into(&mut grad[l.b(Z)], &da_z);
        outer_acc(&mut grad[l.w(R)], &da_r, &c.x);
        outer_acc(&mut grad[l.u(R)], &da_r, &c.h_prev);
        add_into(&mut grad[l.b(R)], &da_r);
        gemv_t_acc(&p[l.u(Z)], &da_z, &mut dh_prev);
        gemv_t_acc(&p[l.u(R)], &da_r, &mut dh_prev);
        dh.copy_from_slice(&dh_prev);
    }
}

fn check_dims(sensors: usize, hidden: usize) -> Result<()> {
    if sensors == 0 || hidden == 0 {
        return Err(Error::config("model", "sensors and hidden size must be positive"));
    }
    Ok(())
}

fn check_gate<T: Scalar>(v: &[T], context: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite { context: context.into(), index: i }),
        None => Ok(()),
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Scalar> Predictor<T> for GruModel<T> {
    fn n_sensors(&self) -> usize {
        self.sensors
    }

    fn initial_state(&self) -> PredictorState<T> {
        PredictorState { hidden: vec![T::zero(); self.hidden], ..PredictorState::default() }
    }

    fn step(&self, input: &[T], state: &mut PredictorState<T>, out: &mut [T]) -> Result<bool> {
        let mut h = vec![T::zero(); self.hidden];
        self.gru_step(input, &state.hidden, &mut h, out)?;
        state.hidden = h;
        Ok(true)
    }
}

impl<T: Scalar> Trainable<T> for GruModel<T> {
    type Tape = Vec<GruStepCache<T>>;

    fn params(&self) -> &[T] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn first_target(&self) -> usize {
        1
    }

    fn initial_carry(&self) -> Vec<T> {
        vec![T::zero(); self.hidden]
    }

    fn forward_batch(
        &self,
        x: &Matrix<T>,
        t0: usize,
        t1: usize,
        carry: &mut Vec<T>,
    ) -> Result<(Matrix<T>, Self::Tape)> {
        if t0 < 1 || t1 > x.cols() || t0 >= t1 || x.rows() != self.sensors {
            return Err(Error::Precondition(format!(
                "GRU batch [{t0}, {t1}) invalid for {}×{} series",
                x.rows(),
                x.cols()
            )));
        }
        let mut preds = Matrix::zeros(self.sensors, t1 - t0);
        let mut tape = Vec::with_capacity(t1 - t0);
        let mut input = vec![T::zero(); self.sensors];
        let mut y = vec![T::zero(); self.sensors];
        for t in t0..t1 {
            x.column_into(t - 1, &mut input);
            let c = self.cell(&input, carry)?;
            self.readout(&c.h, &mut y);
            preds.set_column(t - t0, &y);
            carry.copy_from_slice(&c.h);
            tape.push(c);
        }
        Ok((preds, tape))
    }

    fn backward_batch(&self, tape: &Self::Tape, d_pred: &Matrix<T>, grad: &mut [T]) {
        let l = self.layout();
        let mut dh = vec![T::zero(); self.hidden];
        let mut dy = vec![T::zero(); self.sensors];
        for (j, c) in tape.iter().enumerate().rev() {
            d_pred.column_into(j, &mut dy);
            outer_acc(&mut grad[l.wo()], &dy, &c.h);
            add_into(&mut grad[l.bo()], &dy);
            gemv_t_acc(&self.params[l.wo()], &dy, &mut dh);
            self.step_backward(c, &mut dh, grad);
        }
    }
}
