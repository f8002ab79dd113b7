//! Dense linear-algebra kernels, the Adam optimizer, seeded randomness and a
//! central-difference gradient oracle.

mod adam;
mod fd;
mod matrix;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use fd::finite_diff_grad;
pub use matrix::Matrix;
pub use rng::Rng;

use crate::scalar::Scalar;

/// Dot product of two equally long slices.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `out += m · v` for a row-major `rows × v.len()` block.
#[inline]
pub(crate) fn gemv_acc<T: Scalar>(m: &[T], v: &[T], out: &mut [T]) {
    let cols = v.len();
    debug_assert_eq!(m.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += dot(row, v);
    }
}

/// `out += mᵀ · v` for a row-major `v.len() × out.len()` block.
#[inline]
pub(crate) fn gemv_t_acc<T: Scalar>(m: &[T], v: &[T], out: &mut [T]) {
    let cols = out.len();
    debug_assert_eq!(m.len(), v.len() * cols);
    for (&vi, row) in v.iter().zip(m.chunks_exact(cols)) {
        if vi == T::zero() {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(row) {
            *o += vi * w;
        }
    }
}

/// `m += a · bᵀ` (rank-one update) for a row-major `a.len() × b.len()` block.
#[inline]
pub(crate) fn outer_acc<T: Scalar>(m: &mut [T], a: &[T], b: &[T]) {
    let cols = b.len();
    debug_assert_eq!(m.len(), a.len() * cols);
    for (&ai, row) in a.iter().zip(m.chunks_exact_mut(cols)) {
        if ai == T::zero() {
            continue;
        }
        for (w, &bj) in row.iter_mut().zip(b) {
            *w += ai * bj;
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

pub fn mean<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.iter().fold(T::zero(), |acc, &x| acc + x) / T::of_usize(v.len())
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev<T: Scalar>(v: &[T]) -> T {
    if v.len() < 2 {
        return T::zero();
    }
    let m = mean(v);
    let ss = v.iter().fold(T::zero(), |acc, &x| acc + (x - m) * (x - m));
    (ss / T::of_usize(v.len() - 1)).sqrt()
}

/// Linear-interpolated quantile of an already sorted slice.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = T::of(pos - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * w
}

/// Index of the largest entry; ties go to the lowest index. NaNs are skipped.
pub fn argmax<T: Scalar>(v: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in v.iter().enumerate() {
        if x.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
