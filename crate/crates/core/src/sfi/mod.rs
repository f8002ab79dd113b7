//! Fault isolation after a detection: contribution scores, closed-loop bias
//! estimation and the greedy candidate search in its contribution-ordered and
//! sparse-bias-ordered forms.

mod sparse;

pub use sparse::{soft_threshold_bias, sparse_bias, SparseSolveConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::predictor::{predict_series, FeedMode, Predictor};
use crate::residuals::ResidualStream;
use crate::scalar::Scalar;
use crate::sfd::{binomial_tail, decide, estimate_pd_hat, FusionRule};

/// `x^a`: the entries of `x` listed in `a`, in that order.
pub fn access<T: Copy>(x: &[T], a: &[usize]) -> Result<Vec<T>> {
    let mut seen = vec![false; x.len()];
    a.iter()
        .map(|&i| {
            if i >= x.len() {
                return Err(Error::OutOfRange { what: "access list", index: i, len: x.len() });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Duplicate(i));
            }
            Ok(x[i])
        })
        .collect()
}

/// How residuals are aggregated per sensor in the contribution score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `Σ_t |r_t^s|`.
    #[default]
    Absolute,
    /// `Σ_t r_t^s`, which may cancel.
    Signed,
}

/// Each sensor's share of the aggregate residual over an `S × L` block.
pub fn contribution_scores<T: Scalar>(r: &Matrix<T>, aggregation: Aggregation) -> Result<Vec<f64>> {
    let per: Vec<f64> = (0..r.rows())
        .map(|s| {
            r.row(s)
                .iter()
                .map(|v| match aggregation {
                    Aggregation::Absolute => v.abs().to_f64_lossy(),
                    Aggregation::Signed => v.to_f64_lossy(),
                })
                .sum()
        })
        .collect();
    let total: f64 = per.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::Degenerate(format!("contribution denominator is {total}")));
    }
    Ok(per.iter().map(|v| v / total).collect())
}

/// `argmax_s CS(s)`, lowest index on ties.
pub fn argmax_single(cs: &[f64]) -> Option<usize> {
    crate::numerics::argmax(cs)
}

/// Timing of one isolation attempt.
///
/// The detection batch covers `[t_star, t_star + M)`, the fault is declared
/// at `t_fault = t_star + M` and isolation integrates over
/// `[t_i, t_i + l]` (`l + 1` samples) with `t_i > t_fault`. Rollouts start
/// `warmup` samples before `t_star` so the model state settles on healthy data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfiWindow {
    pub t_star: usize,
    pub t_i: usize,
    pub l: usize,
    pub warmup: usize,
}

impl SfiWindow {
    pub const DEFAULT_L: usize = 60;
    pub const DEFAULT_WARMUP: usize = 200;

    /// Window opening right after the fault is declared.
    pub fn after_detection(t_star: usize, m: usize, l: usize, warmup: usize) -> Self {
        Self { t_star, t_i: t_star + m + 1, l, warmup }
    }

    pub fn warmup_start(&self) -> usize {
        self.t_star.saturating_sub(self.warmup)
    }

    /// One past the last sample used.
    pub fn end(&self) -> usize {
        self.t_i + self.l + 1
    }

    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if self.l == 0 {
            return Err(Error::config("l", "window length must be positive"));
        }
        if self.t_i <= self.t_star {
            return Err(Error::config("t_i", "must come after t_star"));
        }
        if self.end() > n_samples {
            return Err(Error::Precondition(format!(
                "window ends at {} but the series has {n_samples} samples",
                self.end()
            )));
        }
        Ok(())
    }
}

/// What the greedy search needs besides the model and the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsolationSetup {
    pub window: SfiWindow,
    pub gamma: f64,
    pub rule: FusionRule,
    pub aggregation: Aggregation,
}

impl IsolationSetup {
    /// `K_α` rescaled from batches of `M` to windows of `L`.
    pub fn k_window(&self) -> usize {
        let m = self.rule.config.m as f64;
        ((self.rule.k_alpha as f64 * self.window.l as f64 / m).round() as usize).max(1)
    }
}

/// `R̄`, `p̂_d` and the plug-in `P_D` over the isolation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub r_bar: f64,
    pub pd_hat: f64,
    pub pd: f64,
}

/// Open-loop residuals of `x` over the isolation window.
pub fn window_residuals<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    x: &Matrix<T>,
    window: &SfiWindow,
) -> Result<ResidualStream<T>> {
    window.validate(x.cols())?;
    let run = predict_series(model, x, &FeedMode::OpenLoop, window.warmup_start(), window.end())?;
    if run.start > window.t_i {
        return Err(Error::Precondition("model emits no prediction at the window start".into()));
    }
    let full = ResidualStream::from_run(x, &run)?;
    let r = full.r.columns(window.t_i - full.start, window.end() - full.start);
    Ok(ResidualStream::from_residuals(window.t_i, r))
}

pub fn window_stats<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    x: &Matrix<T>,
    setup: &IsolationSetup,
) -> Result<(WindowStats, ResidualStream<T>)> {
    let stream = window_residuals(model, x, &setup.window)?;
    let norms: Vec<f64> = stream.norms.iter().map(|v| v.to_f64_lossy()).collect();
    let r_bar = crate::numerics::mean(&norms);
    let d: Vec<bool> = norms.iter().map(|&r| decide(r, setup.gamma)).collect();
    let pd_hat = estimate_pd_hat(&d);
    let pd = binomial_tail(setup.window.l as u64, setup.k_window() as u64, pd_hat);
    Ok((WindowStats { r_bar, pd_hat, pd }, stream))
}

/// Bias on channels `f`: the model runs with `f` fed back from `t_star` on, and
/// the measured-minus-predicted gap is averaged over the isolation window.
pub fn estimate_bias_closedloop<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    x: &Matrix<T>,
    window: &SfiWindow,
    f: &[usize],
) -> Result<Vec<T>> {
    if f.is_empty() {
        return Err(Error::Precondition("bias estimate needs at least one channel".into()));
    }
    window.validate(x.cols())?;
    let mode = FeedMode::ClosedLoop { channels: f.to_vec(), from: window.t_star };
    let run = predict_series(model, x, &mode, window.warmup_start(), window.end())?;
    if run.start > window.t_i {
        return Err(Error::Precondition("model emits no prediction at the window start".into()));
    }
    let n = T::of_usize(window.l + 1);
    Ok(f.iter()
        .map(|&c| {
            (window.t_i..window.end())
                .fold(T::zero(), |acc, t| acc + x.get(c, t) - run.predictions.get(c, t - run.start))
                / n
        })
        .collect())
}

/// `x` with `delta[k]` subtracted from channel `f[k]` for all `t ≥ from`.
pub fn apply_correction<T: Scalar>(x: &Matrix<T>, f: &[usize], delta: &[T], from: usize) -> Matrix<T> {
    let mut out = x.clone();
    for (&c, &d) in f.iter().zip(delta) {
        for v in &mut out.row_mut(c)[from..] {
            *v -= d;
        }
    }
    out
}

/// How the next candidate is picked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrder {
    /// Contribution scores of the open-loop window residuals.
    Contribution,
    /// `|Δ̂_η|` from the ℓ1-penalized bias fit.
    SparseBias(SparseSolveConfig),
}

/// One candidate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub candidate: usize,
    pub accepted: bool,
    pub pd_before: f64,
    pub pd_after: f64,
    pub r_bar_before: f64,
    pub r_bar_after: f64,
    /// Joint bias estimate for the tentative list (this candidate last).
    pub delta_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultReport {
    pub fault_list: Vec<usize>,
    /// Bias per listed sensor, in the units of the data handed to the search.
    pub delta_hat: Vec<f64>,
    pub initial: WindowStats,
    /// Ordering scores (contribution or `|Δ̂_η|`) that drove the search.
    pub scores: Vec<f64>,
    pub iterations: Vec<IterationLog>,
    pub diagnostic: Option<String>,
}

impl FaultReport {
    pub fn candidate_evaluations(&self) -> usize {
        self.iterations.len()
    }
}

/// Greedy isolation. Candidates are visited in decreasing score order; each
/// joins the list only if correcting the joint bias estimate keeps `P_D` from
/// rising and strictly lowers `R̄`. The search stops once `P_D = 0` or every
/// sensor has been tried, so at most `S` candidates are evaluated.
pub fn greedy_iso<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    x: &Matrix<T>,
    setup: &IsolationSetup,
    order: &CandidateOrder,
) -> Result<FaultReport> {
    let s = x.rows();
    if s != model.n_sensors() {
        return Err(Error::shape("greedy_iso", model.n_sensors(), s));
    }
    let window = setup.window;
    let (initial, stream) = window_stats(model, x, setup)?;
    let mut report = FaultReport {
        fault_list: Vec::new(),
        delta_hat: Vec::new(),
        initial,
        scores: Vec::new(),
        iterations: Vec::new(),
        diagnostic: None,
    };
    report.scores = match order {
        CandidateOrder::Contribution => match contribution_scores(&stream.r, setup.aggregation) {
            Ok(cs) => cs,
            Err(e @ Error::Degenerate(_)) => {
                report.diagnostic = Some(e.to_string());
                return Ok(report);
            }
            Err(e) => return Err(e),
        },
        CandidateOrder::SparseBias(cfg) => {
            let xhat = {
                let mut m = x.columns(window.t_i, window.end());
                for (v, &r) in m.data_mut().iter_mut().zip(stream.r.data()) {
                    *v -= r;
                }
                m
            };
            let d = sparse_bias(&xhat, &x.columns(window.t_i, window.end()), cfg)?;
            d.iter().map(|v| v.abs().to_f64_lossy()).collect()
        }
    };

    let (mut pd, mut r_bar) = (initial.pd, initial.r_bar);
    let mut visited = vec![false; s];
    let mut f: Vec<usize> = Vec::new();
    let mut accepted_delta: Vec<T> = Vec::new();
    while pd > 0.0 && visited.iter().any(|v| !v) {
        let candidate = (0..s)
            .filter(|&i| !visited[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if report.scores[i] <= report.scores[b] => Some(b),
                _ => Some(i),
            })
            .expect("an unvisited sensor remains");
        visited[candidate] = true;
        f.push(candidate);
        let delta = estimate_bias_closedloop(model, x, &window, &f)?;
        let corrected = apply_correction(x, &f, &delta, window.t_star);
        let (after, _) = window_stats(model, &corrected, setup)?;
        let accepted = after.pd <= pd && after.r_bar < r_bar;
        report.iterations.push(IterationLog {
            candidate,
            accepted,
            pd_before: pd,
            pd_after: after.pd,
            r_bar_before: r_bar,
            r_bar_after: after.r_bar,
            delta_hat: delta.iter().map(|v| v.to_f64_lossy()).collect(),
        });
        if accepted {
            pd = after.pd;
            r_bar = after.r_bar;
            accepted_delta = delta;
        } else {
            f.pop();
        }
    }
    report.fault_list = f;
    report.delta_hat = accepted_delta.iter().map(|v| v.to_f64_lossy()).collect();
    Ok(report)
}

/// [`greedy_iso`] ordered by `|Δ̂_η|`.
pub fn greedy_iso_sparse<T: Scalar, P: Predictor<T> + ?Sized>(
    model: &P,
    x: &Matrix<T>,
    setup: &IsolationSetup,
    config: &SparseSolveConfig,
) -> Result<FaultReport> {
    greedy_iso(model, x, setup, &CandidateOrder::SparseBias(*config))
}

/// The `k` sensors with the largest contribution scores (ties to the lowest index).
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}
