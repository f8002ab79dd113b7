//! Isolation metrics and the experiment harness: detection-probability sweeps
//! over offset levels, the smearing-out contribution experiment, one-stage vs
//! two-stage comparison and multi-fault isolation batteries.
//!
//! Every experiment works on normalized data and draws its randomness from
//! streams keyed by `(experiment seed, point)`, so results do not depend on
//! the number of worker threads.

mod metrics;
mod report;

pub use metrics::{acc, bootstrap_ci, bootstrap_mean_ci, iou, miou, Ci};
pub use report::{write_contrib_csv, write_curves_csv, write_json, write_sweep_csv};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::predictor::{predict_series, FeedMode, Predictor};
use crate::residuals::ResidualStream;
use crate::sfd::{detect_batch, FusionRule};
use crate::sfi::{
    contribution_scores, greedy_iso, top_k, window_residuals, Aggregation, CandidateOrder, FaultReport, IsolationSetup,
    SfiWindow, SparseSolveConfig,
};

/// A model together with the threshold calibrated on its own healthy residuals.
#[derive(Clone, Copy)]
pub struct Stage<'a> {
    pub model: &'a (dyn Predictor<f64> + 'a),
    pub gamma: f64,
}

/// Normalized held-out data and the detector settings shared by experiments.
#[derive(Clone, Copy)]
pub struct TestBed<'a> {
    pub x: &'a Matrix<f64>,
    pub norm: &'a NormStats<f64>,
    pub rule: FusionRule,
    /// Healthy samples fed to a model before any fault appears.
    pub warmup: usize,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl TestBed<'_> {
    /// `x` with offset level `beta` on `channels` from `onset` on, in normalized units.
    pub fn inject(&self, channels: &[usize], beta: f64, onset: usize) -> Result<Matrix<f64>> {
        let spec = crate::dataset::offsets_to_delta(beta, channels, self.norm, onset)?;
        let delta = self.norm.delta_to_normalized(&spec.delta);
        Ok(crate::sfi::apply_correction(self.x, &(0..delta.len()).collect::<Vec<_>>(), &neg(&delta), onset))
    }

    fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::config("jobs", e.to_string()))?;
        Ok(pool.install(f))
    }
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

fn key_seed(seed: u64, parts: &[u64]) -> Rng {
    parts.iter().fold(Rng::new(seed), |rng, &p| rng.split(p))
}

/// Offset-level sweep definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub beta_grid: Vec<f64>,
    pub channels: Vec<usize>,
    /// Larger offsets evaluated only on `extended_channels`.
    pub extended_grid: Vec<f64>,
    pub extended_channels: Vec<usize>,
    /// Detection batches per point.
    pub runs_per_point: usize,
    pub bootstrap_reps: usize,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            beta_grid: (0..=12).map(|k| k as f64 / 40.0).collect(),
            channels: (0..8).collect(),
            extended_grid: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            extended_channels: vec![0],
            runs_per_point: 100,
            bootstrap_reps: 1000,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self, sensors: usize) -> Result<()> {
        if self.beta_grid.is_empty() {
            return Err(Error::config("beta_grid", "must not be empty"));
        }
        for grid in [&self.beta_grid, &self.extended_grid] {
            if grid.iter().any(|b| !(*b >= 0.0 && b.is_finite())) || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("beta_grid", "offsets must be nonnegative and strictly ascending"));
            }
        }
        if self.runs_per_point == 0 {
            return Err(Error::config("runs_per_point", "must be at least 1"));
        }
        if self.channels.is_empty() {
            return Err(Error::config("channels", "must not be empty"));
        }
        for &c in self.channels.iter().chain(&self.extended_channels) {
            if c >= sensors {
                return Err(Error::config("channels", format!("channel {c} out of range for {sensors} sensors")));
            }
        }
        Ok(())
    }
}

/// Detection outcome of every batch at one `(channel, β)` point. `channel` is
/// `None` for the across-channel average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub channel: Option<usize>,
    pub beta: f64,
    pub pd: f64,
    pub ci: Ci,
    pub verdicts: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn curve(&self, channel: Option<usize>) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.channel == channel).collect()
    }

    pub fn point(&self, channel: Option<usize>, beta: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.channel == channel && p.beta == beta)
    }
}

/// H1 verdicts of consecutive batches after a fault that starts at `bed.warmup`.
fn batch_verdicts(
    stage: Stage<'_>,
    bed: &TestBed<'_>,
    channel: usize,
    beta: f64,
    runs: usize,
    rng: &mut Rng,
) -> Result<Vec<bool>> {
    let onset = bed.warmup;
    let m = bed.rule.config.m;
    let available = bed.x.cols().saturating_sub(onset) / m;
    let runs = runs.min(available);
    if runs == 0 {
        return Err(Error::Precondition("test split too short for a single detection batch".into()));
    }
    let end = onset + runs * m;
    let x = bed.inject(&[channel], beta, onset)?;
    let run = predict_series(stage.model, &x, &FeedMode::OpenLoop, 0, end)?;
    let stream = ResidualStream::from_run(&x, &run)?;
    (0..runs)
        .map(|k| {
            let t_star = onset + k * m;
            let norms = stream.norms_between(t_star, t_star + m)?;
            Ok(detect_batch(norms, stage.gamma, &bed.rule, t_star, rng)?.is_fault())
        })
        .collect()
}

fn fraction(v: &[bool]) -> f64 {
    v.iter().filter(|&&b| b).count() as f64 / v.len() as f64
}

/// `P_D` per `(channel, β)` as the fraction of H1 batches once the offset is
/// present, plus the across-channel average curve on the base grid.
pub fn pd_sweep(stage: Stage<'_>, bed: &TestBed<'_>, spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate(bed.x.rows())?;
    let mut keys: Vec<(usize, usize, f64)> = Vec::new();
    for &c in &spec.channels {
        for (b, &beta) in spec.beta_grid.iter().enumerate() {
            keys.push((c, b, beta));
        }
    }
    for &c in &spec.extended_channels {
        for (b, &beta) in spec.extended_grid.iter().enumerate() {
            keys.push((c, spec.beta_grid.len() + b, beta));
        }
    }
    let verdicts: Vec<Vec<bool>> = bed.run(|| {
        keys.par_iter()
            .map(|&(c, b, beta)| {
                let mut rng = key_seed(spec.seed, &[c as u64, b as u64]);
                batch_verdicts(stage, bed, c, beta, spec.runs_per_point, &mut rng)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut points: Vec<SweepPoint> = keys
        .iter()
        .zip(verdicts)
        .map(|(&(c, b, beta), v)| {
            let as_f: Vec<f64> = v.iter().map(|&d| d as u8 as f64).collect();
            let ci = bootstrap_mean_ci(&as_f, spec.bootstrap_reps, spec.seed ^ ((c as u64) << 32 | b as u64));
            SweepPoint { channel: Some(c), beta, pd: fraction(&v), ci, verdicts: v }
        })
        .collect();
    for (b, &beta) in spec.beta_grid.iter().enumerate() {
        let per: Vec<&SweepPoint> = points
            .iter()
            .filter(|p| p.channel.is_some() && p.beta == beta && spec.channels.contains(&p.channel.unwrap()))
            .collect();
        let n = per.iter().map(|p| p.verdicts.len()).min().unwrap_or(0);
        let avg_at = |idx: &[usize]| {
            per.iter().map(|p| idx.iter().filter(|&&i| p.verdicts[i]).count() as f64 / idx.len() as f64).sum::<f64>()
                / per.len() as f64
        };
        let all: Vec<usize> = (0..n).collect();
        let pd = avg_at(&all);
        let ci = bootstrap_ci(n, spec.bootstrap_reps, spec.seed ^ (0xa5a5 << 16 | b as u64), avg_at);
        points.push(SweepPoint { channel: None, beta, pd, ci, verdicts: Vec::new() });
    }
    Ok(SweepResult { points })
}

/// Paired one-stage vs two-stage detection curves (across-channel average).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitecturePoint {
    pub beta: f64,
    pub pd_one_stage: f64,
    pub pd_two_stage: f64,
    /// Paired bootstrap interval of `pd_two_stage − pd_one_stage`.
    pub diff_ci: Ci,
    /// Two-stage is not significantly below one-stage here.
    pub dominates: bool,
}

/// Detection with the disentangled model (one stage) against detection with
/// the unregularized model (two stage), on identical data and coin streams.
pub fn compare_architectures(
    one_stage: Stage<'_>,
    two_stage_detector: Stage<'_>,
    bed: &TestBed<'_>,
    spec: &SweepSpec,
) -> Result<(Vec<ArchitecturePoint>, SweepResult, SweepResult)> {
    let base = SweepSpec { extended_grid: Vec::new(), extended_channels: Vec::new(), ..spec.clone() };
    let one = pd_sweep(one_stage, bed, &base)?;
    let two = pd_sweep(two_stage_detector, bed, &base)?;
    let points = spec
        .beta_grid
        .iter()
        .enumerate()
        .map(|(b, &beta)| {
            let pick = |r: &SweepResult| -> Vec<Vec<bool>> {
                spec.channels.iter().map(|&c| r.point(Some(c), beta).unwrap().verdicts.clone()).collect()
            };
            let (v1, v2) = (pick(&one), pick(&two));
            let n = v1.iter().chain(&v2).map(|v| v.len()).min().unwrap_or(0);
            let avg = |v: &[Vec<bool>], idx: &[usize]| {
                v.iter().map(|c| idx.iter().filter(|&&i| c[i]).count() as f64 / idx.len() as f64).sum::<f64>()
                    / v.len() as f64
            };
            let all: Vec<usize> = (0..n).collect();
            let (p1, p2) = (avg(&v1, &all), avg(&v2, &all));
            let diff_ci = bootstrap_ci(n, spec.bootstrap_reps, spec.seed ^ (0x7e57 << 16 | b as u64), |idx| {
                avg(&v2, idx) - avg(&v1, idx)
            });
            ArchitecturePoint {
                beta,
                pd_one_stage: p1,
                pd_two_stage: p2,
                diff_ci,
                dominates: p2 >= p1 || diff_ci.hi >= 0.0,
            }
        })
        .collect();
    Ok((points, one, two))
}

/// Contribution scores of one model at one offset level, averaged over windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRow {
    pub model: String,
    pub beta: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmearingResult {
    pub channel: usize,
    pub rows: Vec<ContributionRow>,
    /// Per model, the smallest grid offset from which the faulty channel ranks
    /// first at every larger offset as well.
    pub crossover: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmearingSpec {
    pub channel: usize,
    pub beta_grid: Vec<f64>,
    /// Windows averaged per point, spaced evenly through the test split.
    pub windows: usize,
    pub l: usize,
}

impl Default for SmearingSpec {
    fn default() -> Self {
        Self { channel: 1, beta_grid: (0..=30).map(|k| k as f64 / 200.0).collect(), windows: 20, l: 60 }
    }
}

/// Contribution plots: how the faulty channel's score grows with the offset
/// for each model, and where it overtakes every other channel.
pub fn smearing_experiment(
    models: &[(String, Stage<'_>)],
    bed: &TestBed<'_>,
    spec: &SmearingSpec,
) -> Result<SmearingResult> {
    if spec.beta_grid.is_empty() {
        return Err(Error::config("beta_grid", "must not be empty"));
    }
    if spec.channel >= bed.x.rows() {
        return Err(Error::config("channel", format!("{} out of range", spec.channel)));
    }
    let m = bed.rule.config.m;
    let span = m + 1 + spec.l + 1;
    let usable = bed.x.cols().saturating_sub(bed.warmup + span);
    if usable == 0 || spec.windows == 0 {
        return Err(Error::Precondition("test split too short for the smearing experiment".into()));
    }
    let stride = (usable / spec.windows).max(1);
    let mut keys = Vec::new();
    for (mi, _) in models.iter().enumerate() {
        for &beta in &spec.beta_grid {
            keys.push((mi, beta));
        }
    }
    let rows: Vec<ContributionRow> = bed.run(|| {
        keys.par_iter()
            .map(|&(mi, beta)| {
                let (name, stage) = &models[mi];
                let mut acc = vec![0.0; bed.x.rows()];
                for w in 0..spec.windows {
                    let t_star = bed.warmup + w * stride;
                    let window = SfiWindow::after_detection(t_star, m, spec.l, bed.warmup);
                    let x = bed.inject(&[spec.channel], beta, t_star)?;
                    let r = window_residuals(stage.model, &x, &window)?;
                    let cs = contribution_scores(&r.r, Aggregation::Absolute)?;
                    acc.iter_mut().zip(&cs).for_each(|(a, c)| *a += c / spec.windows as f64);
                }
                Ok(ContributionRow { model: name.clone(), beta, scores: acc })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let crossover = models
        .iter()
        .map(|(name, _)| {
            let mine: Vec<&ContributionRow> = rows.iter().filter(|r| &r.model == name).collect();
            let first = |r: &ContributionRow| crate::numerics::argmax(&r.scores) == Some(spec.channel);
            let mut cross = None;
            for r in mine.iter().rev() {
                if first(r) {
                    cross = Some(r.beta);
                } else {
                    break;
                }
            }
            (name.clone(), cross)
        })
        .collect();
    Ok(SmearingResult { channel: spec.channel, rows, crossover })
}

/// Randomized multi-fault isolation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySpec {
    pub runs: usize,
    pub min_faults: usize,
    pub max_faults: usize,
    /// Offset level drawn uniformly from this range, shared by a run's faulty sensors.
    pub beta_range: [f64; 2],
    pub etas: Vec<f64>,
    pub sparse: SparseSolveConfig,
    pub l: usize,
    pub seed: u64,
    pub bootstrap_reps: usize,
}

impl Default for BatterySpec {
    fn default() -> Self {
        Self {
            runs: 100,
            min_faults: 2,
            max_faults: 3,
            beta_range: [0.05, 0.30],
            etas: vec![0.0, 0.01, 1.0, 10.0, 100.0, 500.0, 1000.0],
            sparse: SparseSolveConfig::default(),
            l: 60,
            seed: 0,
            bootstrap_reps: 1000,
        }
    }
}

impl BatterySpec {
    pub fn validate(&self, sensors: usize) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("runs", "must be at least 1"));
        }
        if self.min_faults == 0 || self.min_faults > self.max_faults || self.max_faults > sensors {
            return Err(Error::config("faults", format!("need 1 <= min <= max <= {sensors}")));
        }
        let [lo, hi] = self.beta_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::config("beta_range", "need 0 <= lo <= hi"));
        }
        if self.etas.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::config("etas", "must be nonnegative"));
        }
        self.sparse.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryRun {
    pub run: usize,
    pub t_star: usize,
    pub beta: f64,
    pub truth: Vec<usize>,
    /// Verdict of the detector on the batch starting at `t_star`.
    pub detected: bool,
    pub greedy: FaultReport,
    /// Fault list per entry of `BatterySpec::etas`.
    pub sparse: Vec<Vec<usize>>,
    pub sparse_evaluations: Vec<usize>,
    /// Top-`k` contribution baseline given the true `k`.
    pub top_k: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub miou: f64,
    pub ci: Ci,
    /// Exact single-sensor isolation rate; only for single-fault batteries.
    pub acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryResult {
    pub runs: Vec<BatteryRun>,
    pub summary: Vec<MethodSummary>,
    pub detection_rate: f64,
    pub max_candidate_evaluations: usize,
}

impl BatteryResult {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|m| m.method == name)
    }
}

fn battery_run(
    detector: Stage<'_>,
    isolator: Stage<'_>,
    bed: &TestBed<'_>,
    spec: &BatterySpec,
    run: usize,
) -> Result<BatteryRun> {
    let s = bed.x.rows();
    let m = bed.rule.config.m;
    let mut rng = key_seed(spec.seed, &[run as u64]);
    let k = spec.min_faults + rng.below(spec.max_faults - spec.min_faults + 1);
    let mut truth = rng.choose_distinct(k, s);
    truth.sort_unstable();
    let beta = rng.uniform(spec.beta_range[0], spec.beta_range[1]);
    let span = m + 1 + spec.l + 1;
    let last = bed
        .x
        .cols()
        .checked_sub(span)
        .filter(|&l| l > bed.warmup)
        .ok_or_else(|| Error::Precondition("test split too short for an isolation window".into()))?;
    let t_star = bed.warmup + rng.below(last - bed.warmup);
    let x = bed.inject(&truth, beta, t_star)?;
    let window = SfiWindow::after_detection(t_star, m, spec.l, bed.warmup);

    let det_run = predict_series(detector.model, &x, &FeedMode::OpenLoop, window.warmup_start(), t_star + m)?;
    let det = ResidualStream::from_run(&x, &det_run)?;
    let mut coin = rng.split(1);
    let detected =
        detect_batch(det.norms_between(t_star, t_star + m)?, detector.gamma, &bed.rule, t_star, &mut coin)?.is_fault();

    let setup = IsolationSetup { window, gamma: isolator.gamma, rule: bed.rule, aggregation: Aggregation::Absolute };
    let greedy = greedy_iso(isolator.model, &x, &setup, &CandidateOrder::Contribution)?;
    let mut sparse = Vec::new();
    let mut sparse_evaluations = Vec::new();
    for &eta in &spec.etas {
        let cfg = SparseSolveConfig { eta, ..spec.sparse };
        let rep = greedy_iso(isolator.model, &x, &setup, &CandidateOrder::SparseBias(cfg))?;
        sparse_evaluations.push(rep.candidate_evaluations());
        sparse.push(rep.fault_list);
    }
    let top = match contribution_scores(&window_residuals(isolator.model, &x, &window)?.r, Aggregation::Absolute) {
        Ok(cs) => top_k(&cs, k),
        Err(_) => Vec::new(),
    };
    Ok(BatteryRun { run, t_star, beta, truth, detected, greedy, sparse, sparse_evaluations, top_k: top })
}

fn single(list: &[usize], sentinel: usize) -> usize {
    if list.len() == 1 {
        list[0]
    } else {
        sentinel
    }
}

/// Runs the battery: per run, random faulty sensors and offset, detection on
/// the fault's first batch, then GreedyIso, GreedyIsoSparse for every `η` and
/// the top-`k` baseline on the isolation window.
pub fn run_battery(
    detector: Stage<'_>,
    isolator: Stage<'_>,
    bed: &TestBed<'_>,
    spec: &BatterySpec,
) -> Result<BatteryResult> {
    spec.validate(bed.x.rows())?;
    let runs: Vec<BatteryRun> = bed.run(|| {
        (0..spec.runs)
            .into_par_iter()
            .map(|r| battery_run(detector, isolator, bed, spec, r))
            .collect::<Result<Vec<_>>>()
    })??;
    let s = bed.x.rows();
    let single_fault = spec.max_faults == 1;
    let summarize = |method: String, lists: Vec<&Vec<usize>>, salt: u64| -> Result<MethodSummary> {
        let pairs: Vec<(Vec<usize>, Vec<usize>)> =
            lists.iter().zip(&runs).map(|(l, r)| ((*l).clone(), r.truth.clone())).collect();
        let ious: Vec<f64> = pairs.iter().map(|(p, t)| iou(p, t)).collect();
        let acc_v = if single_fault {
            let pred: Vec<usize> = lists.iter().map(|l| single(l, s)).collect();
            let truth: Vec<usize> = runs.iter().map(|r| r.truth[0]).collect();
            Some(acc(&pred, &truth)?)
        } else {
            None
        };
        Ok(MethodSummary {
            method,
            miou: miou(&pairs)?,
            ci: bootstrap_mean_ci(&ious, spec.bootstrap_reps, spec.seed ^ salt),
            acc: acc_v,
        })
    };
    let mut summary = vec![
        summarize("top_k".into(), runs.iter().map(|r| &r.top_k).collect(), 1)?,
        summarize("greedy_iso".into(), runs.iter().map(|r| &r.greedy.fault_list).collect(), 2)?,
    ];
    for (i, eta) in spec.etas.iter().enumerate() {
        summary.push(summarize(
            format!("greedy_iso_sparse(eta={eta})"),
            runs.iter().map(|r| &r.sparse[i]).collect(),
            3 + i as u64,
        )?);
    }
    let max_candidate_evaluations = runs
        .iter()
        .flat_map(|r| std::iter::once(r.greedy.candidate_evaluations()).chain(r.sparse_evaluations.iter().copied()))
        .max()
        .unwrap_or(0);
    let detection_rate = runs.iter().filter(|r| r.detected).count() as f64 / runs.len() as f64;
    Ok(BatteryResult { runs, summary, detection_rate, max_candidate_evaluations })
}
