use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Which covariance penalty is added to the prediction error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    None,
    /// `L_C` over the whole covariance matrix.
    Full,
    /// `L_{C_s}` over row `s` only.
    Targeted(usize),
}

/// Value of each loss term for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub mse: T,
    pub penalty: T,
    pub total: T,
}

fn check_same<T: Scalar>(x: &Matrix<T>, xhat: &Matrix<T>) -> Result<()> {
    if x.shape() != xhat.shape() {
        return Err(Error::shape("loss", format!("{:?}", x.shape()), format!("{:?}", xhat.shape())));
    }
    Ok(())
}

/// `(1/N) Σ_t ‖x_t − x̂_t‖²` over the `N` columns.
pub fn mse_loss<T: Scalar>(x: &Matrix<T>, xhat: &Matrix<T>) -> Result<T> {
    check_same(x, xhat)?;
    let n = x.cols();
    if n == 0 {
        return Err(Error::Precondition("mse over zero samples".into()));
    }
    let ss = x.data().iter().zip(xhat.data()).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(ss / T::of_usize(n))
}

/// Unbiased sample covariance of the rows of an `S × N` prediction matrix,
/// computed in two passes.
pub fn prediction_covariance<T: Scalar>(xhat: &Matrix<T>) -> Result<Matrix<T>> {
    let (s, n) = xhat.shape();
    if n < 2 {
        return Err(Error::Precondition(format!("covariance needs at least 2 samples, got {n}")));
    }
    let centered = centered_rows(xhat);
    let denom = T::of_usize(n - 1);
    let mut c = Matrix::zeros(s, s);
    for i in 0..s {
        for j in i..s {
            let v = crate::numerics::dot(centered.row(i), centered.row(j)) / denom;
            c.set(i, j, v);
            c.set(j, i, v);
        }
    }
    Ok(c)
}

fn centered_rows<T: Scalar>(xhat: &Matrix<T>) -> Matrix<T> {
    let mut centered = xhat.clone();
    for i in 0..xhat.rows() {
        let m = crate::numerics::mean(xhat.row(i));
        centered.row_mut(i).iter_mut().for_each(|v| *v -= m);
    }
    centered
}

/// `(1/S²) Σ_{i,j} |C_ij|`, diagonal included.
pub fn disentangle_loss<T: Scalar>(c: &Matrix<T>) -> T {
    let s = T::of_usize(c.rows());
    c.data().iter().fold(T::zero(), |acc, v| acc + v.abs()) / (s * s)
}

/// `(1/S) Σ_j |C_sj|`.
pub fn targeted_loss<T: Scalar>(c: &Matrix<T>, s: usize) -> Result<T> {
    if s >= c.rows() {
        return Err(Error::OutOfRange { what: "covariance row", index: s, len: c.rows() });
    }
    let sum = c.row(s).iter().fold(T::zero(), |acc, v| acc + v.abs());
    Ok(sum / T::of_usize(c.rows()))
}

/// Off-diagonal L1 mass `Σ_{i≠j} |C_ij|`, the quantity the penalty is meant to shrink.
pub fn offdiag_l1<T: Scalar>(c: &Matrix<T>) -> T {
    let mut acc = T::zero();
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            if i != j {
                acc += c.get(i, j).abs();
            }
        }
    }
    acc
}

fn check_mode(mode: LossMode, s: usize) -> Result<()> {
    match mode {
        LossMode::Targeted(k) if k >= s => Err(Error::OutOfRange { what: "target sensor", index: k, len: s }),
        _ => Ok(()),
    }
}

/// `L_MSE + λ·penalty`. With `λ = 0` or [`LossMode::None`] this is exactly the MSE.
pub fn total_loss<T: Scalar>(x: &Matrix<T>, xhat: &Matrix<T>, lambda: T, mode: LossMode) -> Result<T> {
    Ok(loss_parts(x, xhat, lambda, mode)?.total)
}

pub fn loss_parts<T: Scalar>(x: &Matrix<T>, xhat: &Matrix<T>, lambda: T, mode: LossMode) -> Result<LossParts<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::config("lambda", "must be nonnegative"));
    }
    check_mode(mode, x.rows())?;
    let mse = mse_loss(x, xhat)?;
    let penalty = match mode {
        LossMode::None => T::zero(),
        LossMode::Full => disentangle_loss(&prediction_covariance(xhat)?),
        LossMode::Targeted(s) => targeted_loss(&prediction_covariance(xhat)?, s)?,
    };
    let total = if lambda == T::zero() || mode == LossMode::None { mse } else { mse + lambda * penalty };
    Ok(LossParts { mse, penalty, total })
}

/// Loss value and `∂L_tot/∂X̂`.
///
/// With `D = X̂ − μ1ᵀ` and `G = sign(C)` scaled by the penalty normalization
/// (restricted to row `s` in targeted mode), the penalty gradient is
/// `(G + Gᵀ) D / (N − 1)`. The subgradient of `|·|` at zero is taken as zero.
pub fn loss_and_grad<T: Scalar>(
    x: &Matrix<T>,
    xhat: &Matrix<T>,
    lambda: T,
    mode: LossMode,
) -> Result<(LossParts<T>, Matrix<T>)> {
    let parts = loss_parts(x, xhat, lambda, mode)?;
    let (s, n) = x.shape();
    let two_over_n = T::of(2.0) / T::of_usize(n);
    let mut grad = Matrix::zeros(s, n);
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(x.data()).zip(xhat.data()) {
        *g = two_over_n * (b - a);
    }
    if lambda == T::zero() || mode == LossMode::None {
        return Ok((parts, grad));
    }
    let c = prediction_covariance(xhat)?;
    let sign = |v: T| {
        if v > T::zero() {
            T::one()
        } else if v < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    };
    let sf = T::of_usize(s);
    let mut g = Matrix::zeros(s, s);
    match mode {
        LossMode::Full => {
            for i in 0..s {
                for j in 0..s {
                    g.set(i, j, sign(c.get(i, j)) / (sf * sf));
                }
            }
        }
        LossMode::Targeted(k) => {
            for j in 0..s {
                g.set(k, j, sign(c.get(k, j)) / sf);
            }
        }
        LossMode::None => unreachable!(),
    }
    let d = centered_rows(xhat);
    let scale = lambda / T::of_usize(n - 1);
    for i in 0..s {
        for j in 0..s {
            let coef = (g.get(i, j) + g.get(j, i)) * scale;
            if coef == T::zero() {
                continue;
            }
            for (gv, &dv) in grad.row_mut(i).iter_mut().zip(d.row(j)) {
                *gv += coef * dv;
            }
        }
    }
    Ok((parts, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, Rng};

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mse_examples() {
        let x = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(mse_loss(&x, &x).unwrap(), 0.0);
        let a = m(&[vec![3.0], vec![4.0]]);
        let z = m(&[vec![0.0], vec![0.0]]);
        assert_eq!(mse_loss(&a, &z).unwrap(), 25.0);
        let b = m(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let b2 = b.scale(2.0);
        let zz = Matrix::zeros(2, 2);
        assert_eq!(mse_loss(&b2, &zz).unwrap(), 4.0 * mse_loss(&b, &zz).unwrap());
        assert!(mse_loss(&a, &x).is_err());
    }

    #[test]
    fn covariance_examples() {
        let c = prediction_covariance(&m(&[vec![3.0; 5], vec![-1.0; 5]])).unwrap();
        assert_eq!(c, Matrix::zeros(2, 2));
        let c = prediction_covariance(&m(&[vec![0.0, 2.0]])).unwrap();
        assert_eq!(c.data(), &[2.0]);
        assert!(prediction_covariance(&m(&[vec![1.0]])).is_err());
    }

    #[test]
    fn covariance_matches_naive_oracle() {
        let mut rng = Rng::new(3);
        let x = Matrix::from_fn(4, 50, |_, _| rng.normal() * 3.0 + 1.0);
        let c = prediction_covariance(&x).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mi: f64 = x.row(i).iter().sum::<f64>() / 50.0;
                let mj: f64 = x.row(j).iter().sum::<f64>() / 50.0;
                let mut acc = 0.0;
                for t in 0..50 {
                    acc += (x.get(i, t) - mi) * (x.get(j, t) - mj);
                }
                assert!((c.get(i, j) - acc / 49.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn disentangle_examples() {
        assert_eq!(disentangle_loss(&Matrix::<f64>::zeros(3, 3)), 0.0);
        let c = m(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        assert_eq!(disentangle_loss(&c), 1.0);
        assert_eq!(targeted_loss(&c, 0).unwrap(), 1.0);
        assert!(targeted_loss(&c, 2).is_err());
        assert_eq!(targeted_loss(&Matrix::<f64>::zeros(2, 2), 1).unwrap(), 0.0);
    }

    #[test]
    fn targeted_average_is_full_loss() {
        let mut rng = Rng::new(4);
        let x = Matrix::from_fn(5, 30, |_, _| rng.normal());
        let c = prediction_covariance(&x).unwrap();
        let avg: f64 = (0..5).map(|s| targeted_loss(&c, s).unwrap()).sum::<f64>() / 5.0;
        assert!((avg - disentangle_loss(&c)).abs() < 1e-14);
    }

    #[test]
    fn scaling_predictions_scales_penalty_quadratically() {
        let mut rng = Rng::new(5);
        let x = Matrix::from_fn(3, 40, |_, _| rng.normal());
        let l1 = disentangle_loss(&prediction_covariance(&x).unwrap());
        let l3 = disentangle_loss(&prediction_covariance(&x.scale(3.0)).unwrap());
        assert!((l3 - 9.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn total_loss_identities() {
        let mut rng = Rng::new(6);
        let x = Matrix::from_fn(3, 20, |_, _| rng.normal());
        let xh = Matrix::from_fn(3, 20, |_, _| rng.normal());
        let mse = mse_loss(&x, &xh).unwrap();
        assert_eq!(total_loss(&x, &xh, 0.0, LossMode::Full).unwrap().to_bits(), mse.to_bits());
        let lc = disentangle_loss(&prediction_covariance(&xh).unwrap());
        let t = total_loss(&x, &xh, 0.01, LossMode::Full).unwrap();
        assert!((t - (mse + 0.01 * lc)).abs() < 1e-12);
        assert!(total_loss(&x, &xh, 0.01, LossMode::Targeted(3)).is_err());
        assert!(total_loss(&x, &xh, -1.0, LossMode::Full).is_err());
    }

    #[test]
    fn uncorrelated_constant_predictions_carry_no_penalty() {
        let x = m(&[vec![1.0, 2.0, 3.0]]);
        let xh = m(&[vec![2.0, 2.0, 2.0]]);
        assert_eq!(total_loss(&x, &xh, 0.5, LossMode::Full).unwrap(), mse_loss(&x, &xh).unwrap());
    }

    #[test]
    fn prediction_gradient_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let x = Matrix::from_fn(3, 9, |_, _| rng.normal());
        let xh = Matrix::from_fn(3, 9, |_, _| rng.normal());
        for mode in [LossMode::None, LossMode::Full, LossMode::Targeted(1)] {
            let (_, g) = loss_and_grad(&x, &xh, 0.7, mode).unwrap();
            let fd = finite_diff_grad(
                |p: &[f64]| {
                    let xp = Matrix::from_vec(3, 9, p.to_vec()).unwrap();
                    total_loss(&x, &xp, 0.7, mode).unwrap()
                },
                xh.data(),
                1e-6,
            )
            .unwrap();
            for (a, b) in g.data().iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{mode:?}: {a} vs {b}");
            }
        }
    }
}
