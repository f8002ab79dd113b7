use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Fraction of positions where `predicted` and `truth` agree.
pub fn acc(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("acc", truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::Precondition("accuracy over zero runs".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Jaccard index of two index sets; two empty sets score 1.
pub fn iou(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Mean IoU over `(predicted, truth)` pairs.
pub fn miou(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Precondition("mIoU over zero runs".into()));
    }
    Ok(pairs.iter().map(|(p, t)| iou(p, t)).sum::<f64>() / pairs.len() as f64)
}

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub lo: f64,
    pub hi: f64,
}

/// 95% percentile-bootstrap interval for the mean of `values`.
pub fn bootstrap_mean_ci(values: &[f64], reps: usize, seed: u64) -> Ci {
    bootstrap_ci(values.len(), reps, seed, |idx| idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64)
}

/// 95% percentile-bootstrap interval of `stat` over resampled index sets.
pub fn bootstrap_ci(n: usize, reps: usize, seed: u64, mut stat: impl FnMut(&[usize]) -> f64) -> Ci {
    if n == 0 || reps == 0 {
        return Ci { lo: f64::NAN, hi: f64::NAN };
    }
    let mut rng = Rng::new(seed);
    let mut idx = vec![0; n];
    let mut stats: Vec<f64> = (0..reps)
        .map(|_| {
            idx.iter_mut().for_each(|i| *i = rng.below(n));
            stat(&idx)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ci { lo: crate::numerics::quantile_sorted(&stats, 0.025), hi: crate::numerics::quantile_sorted(&stats, 0.975) }
}
