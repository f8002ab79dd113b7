//! Batch sensor-fault detection: per-sample threshold decisions fused by a
//! randomized K-out-of-M rule calibrated to a system-level false-alarm rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::scalar::Scalar;

/// `D_t = 1` iff `R_t > γ` (ties go to healthy).
#[inline]
pub fn decide<T: Scalar>(r: T, gamma: T) -> bool {
    r > gamma
}

fn ln_choose(m: u64, i: u64) -> f64 {
    libm::lgamma(m as f64 + 1.0) - libm::lgamma(i as f64 + 1.0) - libm::lgamma((m - i) as f64 + 1.0)
}

/// `P(X ≥ K)` for `X ~ Binomial(M, p)`, summed in log space.
pub fn binomial_tail(m: u64, k: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > m || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let terms: Vec<f64> = (k..=m).map(|i| ln_choose(m, i) + i as f64 * lp + (m - i) as f64 * lq).collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
    (top + sum.ln()).exp().min(1.0)
}

/// User-facing detector settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Samples per batch.
    pub m: usize,
    /// Target system-level false-alarm probability.
    pub alpha: f64,
    /// Per-sample false-alarm probability the threshold is calibrated to.
    pub p_fa: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { m: 60, alpha: 0.1, p_fa: 0.01 }
    }
}

/// A resolved randomized K-out-of-M test.
///
/// H1 is declared when at least `k_alpha` samples fire. When exactly
/// `k_alpha − 1` fire, H1 is declared with probability `p_flip`, which makes
/// the false-alarm rate `α1 + p_flip·(α2 − α1) = α` for i.i.d. decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionRule {
    pub config: FusionConfig,
    pub k_alpha: usize,
    pub p_flip: f64,
    /// `P(count ≥ K_α | H0)`.
    pub alpha1: f64,
    /// `P(count ≥ K_α − 1 | H0)`.
    pub alpha2: f64,
}

/// Smallest `K` with `P(count ≥ K) ≤ α`, its bracketing tails and the coin bias.
pub fn choose_k(m: usize, p_fa: f64, alpha: f64) -> Result<FusionRule> {
    if m == 0 {
        return Err(Error::config("m", "batch size must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(Error::config("p_fa", format!("must lie in (0, 1), got {p_fa}")));
    }
    let mu = m as u64;
    let k = (1..=mu).find(|&k| binomial_tail(mu, k, p_fa) <= alpha).ok_or_else(|| {
        Error::config("alpha", format!("{alpha} is below P(all {m} samples fire) = {:e}", binomial_tail(mu, mu, p_fa)))
    })?;
    let alpha1 = binomial_tail(mu, k, p_fa);
    let alpha2 = binomial_tail(mu, k - 1, p_fa);
    let p_flip = ((alpha - alpha1) / (alpha2 - alpha1)).clamp(0.0, 1.0);
    let config = FusionConfig { m, alpha, p_fa };
    if p_fa > alpha / m as f64 {
        log::warn!("p_fa = {p_fa} exceeds alpha/M = {:.5}; the binomial approximation is loose", alpha / m as f64);
    }
    Ok(FusionRule { config, k_alpha: k as usize, p_flip, alpha1, alpha2 })
}

impl FusionConfig {
    pub fn resolve(&self) -> Result<FusionRule> {
        choose_k(self.m, self.p_fa, self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchVerdict {
    pub decisions: Vec<bool>,
    pub count: usize,
    pub verdict: Hypothesis,
    pub used_coin_flip: bool,
    pub t_star: usize,
    /// `t_star + M`: the time the verdict becomes available.
    pub t_fault: usize,
}

/// One JSON-lines record of a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub t_star: usize,
    pub count: usize,
    #[serde(rename = "K_alpha")]
    pub k_alpha: usize,
    pub verdict: Hypothesis,
    pub used_coin_flip: bool,
}

impl BatchVerdict {
    pub fn is_fault(&self) -> bool {
        self.verdict == Hypothesis::H1
    }

    pub fn record(&self, rule: &FusionRule) -> VerdictRecord {
        VerdictRecord {
            t_star: self.t_star,
            count: self.count,
            k_alpha: rule.k_alpha,
            verdict: self.verdict,
            used_coin_flip: self.used_coin_flip,
        }
    }
}

/// Applies the randomized rule to one batch of `M` decisions. The generator
/// is consulted only at the boundary count.
pub fn fuse(decisions: &[bool], rule: &FusionRule, t_star: usize, rng: &mut Rng) -> Result<BatchVerdict> {
    let m = rule.config.m;
    if decisions.len() != m {
        return Err(Error::shape("fuse", m, decisions.len()));
    }
    let count = decisions.iter().filter(|&&d| d).count();
    let (verdict, used_coin_flip) = if count >= rule.k_alpha {
        (Hypothesis::H1, false)
    } else if count + 1 == rule.k_alpha {
        let flip = rng.bernoulli(rule.p_flip);
        (if flip { Hypothesis::H1 } else { Hypothesis::H0 }, true)
    } else {
        (Hypothesis::H0, false)
    };
    Ok(BatchVerdict { decisions: decisions.to_vec(), count, verdict, used_coin_flip, t_star, t_fault: t_star + m })
}

/// Thresholds and fuses the batch of norms starting at `t_star`.
pub fn detect_batch<T: Scalar>(
    norms: &[T],
    gamma: T,
    rule: &FusionRule,
    t_star: usize,
    rng: &mut Rng,
) -> Result<BatchVerdict> {
    let d: Vec<bool> = norms.iter().map(|&r| decide(r, gamma)).collect();
    fuse(&d, rule, t_star, rng)
}

/// Detection fraction over a window, the run-time stand-in for `p_d`.
pub fn estimate_pd_hat(decisions: &[bool]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    decisions.iter().filter(|&&d| d).count() as f64 / decisions.len() as f64
}
