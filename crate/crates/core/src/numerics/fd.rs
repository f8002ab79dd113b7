use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central finite-difference gradient `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn finite_diff_grad<T, F>(mut f: F, x: &[T], h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    if !(h > T::zero()) {
        return Err(Error::config("h", "step must be positive"));
    }
    let mut probe = x.to_vec();
    let two_h = h + h;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let xi = probe[i];
        probe[i] = xi + h;
        let up = f(&probe);
        probe[i] = xi - h;
        let down = f(&probe);
        probe[i] = xi;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { context: "finite-difference evaluation".into(), index: i });
        }
        grad.push((up - down) / two_h);
    }
    Ok(grad)
}
