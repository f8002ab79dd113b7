use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{quantile_sorted, std_dev};

/// Fewest samples accepted by [`Kde::fit`].
pub const MIN_KDE_SAMPLES: usize = 100;

/// Gaussian-kernel density on `[0, ∞)` with reflection at zero and
/// Silverman's bandwidth `0.9·min(σ̂, IQR/1.34)·n^{−1/5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
}

fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal upper tail `P(Z > z)`.
fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

impl Kde {
    pub fn fit(samples: &[f64]) -> Result<Self> {
        if samples.len() < MIN_KDE_SAMPLES {
            return Err(Error::Calibration(format!("need at least {MIN_KDE_SAMPLES} samples, got {}", samples.len())));
        }
        if let Some(i) = samples.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Calibration(format!("sample {i} is negative or non-finite")));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let sd = std_dev(&sorted);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        if !(spread > 0.0) {
            return Err(Error::Calibration("samples have zero spread".into()));
        }
        let bandwidth = 0.9 * spread * (sorted.len() as f64).powf(-0.2);
        Ok(Self { samples: sorted, bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// Density at `r` (zero for `r < 0`).
    pub fn density(&self, r: f64) -> f64 {
        if r < 0.0 {
            return 0.0;
        }
        let h = self.bandwidth;
        let sum: f64 = self.samples.iter().map(|&x| phi((r - x) / h) + phi((r + x) / h)).sum();
        sum / (self.samples.len() as f64 * h)
    }

    /// `P(R > r)` under the estimated density.
    pub fn survival(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 1.0;
        }
        let h = self.bandwidth;
        let sum: f64 = self.samples.iter().map(|&x| upper_tail((r - x) / h) + upper_tail((r + x) / h)).sum();
        (sum / self.samples.len() as f64).clamp(0.0, 1.0)
    }
}

/// `γ` with `survival(γ) = p_fa`, by bisection to within `1e-4` in probability.
pub fn calibrate_threshold(kde: &Kde, p_fa: f64) -> Result<f64> {
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(Error::config("p_fa", format!("must lie in (0, 1), got {p_fa}")));
    }
    let mut lo = 0.0;
    let mut hi = kde.samples.last().copied().unwrap_or(0.0) + 10.0 * kde.bandwidth;
    if !(kde.survival(lo) >= p_fa && kde.survival(hi) <= p_fa) {
        return Err(Error::Calibration(format!("survival function does not bracket {p_fa}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kde.survival(mid) > p_fa {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    let gamma = 0.5 * (lo + hi);
    if (kde.survival(gamma) - p_fa).abs() > 1e-4 {
        return Err(Error::Calibration(format!("bisection stalled at γ = {gamma}")));
    }
    Ok(gamma)
}
