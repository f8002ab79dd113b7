//! Shared steps of the commands: loading and splitting data, training,
//! checkpoint locations and the detection pass.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sfdsfi::dataset::{fit_normalizer, load_csv, offsets_to_delta, split, NormStats, SensorSeries};
use sfdsfi::numerics::Rng;
use sfdsfi::predictor::{
    predict_series, train, Checkpoint, EpochRecord, FeedMode, FfnnModel, GruModel, Model, ModelKind, TrainConfig,
};
use sfdsfi::residuals::{ResidualProfile, ResidualStream};
use sfdsfi::sfd::{detect_batch, BatchVerdict, FusionRule};

use crate::config::RunConfig;

/// Checkpoint file names inside the output directory.
pub const SINGLE_CHECKPOINT: &str = "model.json";
pub const DETECTOR_CHECKPOINT: &str = "detector.json";
pub const ISOLATOR_CHECKPOINT: &str = "isolator.json";

/// Chronological splits, normalized with statistics of the training split.
pub struct Prepared {
    pub norm: NormStats<f64>,
    pub train: SensorSeries<f64>,
    pub validation: SensorSeries<f64>,
    pub test: SensorSeries<f64>,
}

pub fn load_dataset(cfg: &RunConfig) -> Result<SensorSeries<f64>> {
    let path = cfg.data_path();
    if !path.exists() {
        bail!("dataset not found: {} (run `sfdsfi synth` first or set data.path)", path.display());
    }
    let series = load_csv(&path).with_context(|| format!("loading {}", path.display()))?;
    if series.n_sensors() != cfg.data.sensors {
        bail!(
            "dataset {} has {} sensors but the config expects {}",
            path.display(),
            series.n_sensors(),
            cfg.data.sensors
        );
    }
    Ok(series)
}

pub fn prepare(cfg: &RunConfig, series: &SensorSeries<f64>, norm: Option<&NormStats<f64>>) -> Result<Prepared> {
    let (tr, va, te) = split(series, &cfg.split)?;
    let norm = match norm {
        Some(n) => n.clone(),
        None => fit_normalizer(&tr)?,
    };
    Ok(Prepared { train: norm.apply(&tr)?, validation: norm.apply(&va)?, test: norm.apply(&te)?, norm })
}

/// Fresh model; every stage starts from the same initial weights.
pub fn init_model(cfg: &RunConfig) -> Result<Model<f64>> {
    let mut rng = Rng::new(cfg.seed).split(10);
    let s = cfg.data.sensors;
    Ok(match cfg.model.kind {
        ModelKind::Gru => Model::Gru(GruModel::new(s, cfg.model.hidden(), &mut rng)?),
        ModelKind::Ffnn => Model::Ffnn(FfnnModel::new(s, cfg.model.window, cfg.model.hidden(), &mut rng)?),
    })
}

/// Trains one model and calibrates its detection threshold on the
/// validation split.
pub fn train_stage(
    cfg: &RunConfig,
    data: &Prepared,
    train_cfg: &TrainConfig,
) -> Result<(Checkpoint<f64>, Vec<EpochRecord>)> {
    let mut model = init_model(cfg)?;
    let report = match &mut model {
        Model::Gru(m) => train(m, data.train.values(), data.validation.values(), train_cfg)?,
        Model::Ffnn(m) => train(m, data.train.values(), data.validation.values(), train_cfg)?,
    };
    let skip = cfg.isolation.warmup;
    let profile = ResidualProfile::from_model(&model, data.validation.values(), cfg.fusion.p_fa, skip)?;
    let iso_p_fa = cfg.isolation.p_fa(&cfg.fusion);
    let iso_profile = ResidualProfile::from_model(&model, data.validation.values(), iso_p_fa, skip)?;
    let ckpt = Checkpoint::new(&model, data.norm.clone(), train_cfg.clone(), Some(profile))
        .with_isolation_profile(iso_profile);
    Ok((ckpt, report.history))
}

pub fn checkpoint_path(out: &Path, name: &str) -> PathBuf {
    out.join(name)
}

pub fn load_checkpoint(out: &Path, name: &str) -> Result<Checkpoint<f64>> {
    let path = checkpoint_path(out, name);
    if !path.exists() {
        bail!("checkpoint not found: {} (run `sfdsfi train` first)", path.display());
    }
    Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))
}

/// Detector and isolator checkpoints: the two-stage pair, or the single
/// model in both roles.
pub fn load_stages(out: &Path, two_stage: bool) -> Result<(Checkpoint<f64>, Checkpoint<f64>)> {
    if two_stage {
        Ok((load_checkpoint(out, DETECTOR_CHECKPOINT)?, load_checkpoint(out, ISOLATOR_CHECKPOINT)?))
    } else {
        let c = load_checkpoint(out, SINGLE_CHECKPOINT)?;
        Ok((c.clone(), c))
    }
}

pub fn gamma_of(ckpt: &Checkpoint<f64>) -> Result<f64> {
    ckpt.profile.as_ref().map(|p| p.gamma).context("checkpoint carries no calibrated threshold; retrain it")
}

/// Isolation threshold, falling back to the detection one for older files.
pub fn isolation_gamma_of(ckpt: &Checkpoint<f64>) -> Result<f64> {
    match &ckpt.isolation_profile {
        Some(p) => Ok(p.gamma),
        None => gamma_of(ckpt),
    }
}

/// Parses `CH:BETA` fault injections.
pub fn parse_injection(spec: &str) -> Result<(usize, f64)> {
    let (c, b) = spec.split_once(':').with_context(|| format!("injection `{spec}` is not CH:BETA"))?;
    let c: usize = c.trim().parse().with_context(|| format!("bad channel in `{spec}`"))?;
    let b: f64 = b.trim().parse().with_context(|| format!("bad offset level in `{spec}`"))?;
    if !(b.is_finite()) {
        bail!("offset level in `{spec}` must be finite");
    }
    Ok((c, b))
}

/// Normalized evaluation data: an explicit CSV or the configured test split,
/// with optional offsets applied from the warm-up boundary on.
pub fn evaluation_data(
    cfg: &RunConfig,
    ckpt: &Checkpoint<f64>,
    data: Option<&Path>,
    inject: &[(usize, f64)],
) -> Result<SensorSeries<f64>> {
    let s = ckpt.shapes.sensors;
    let series = match data {
        Some(p) => {
            let raw = load_csv(p).with_context(|| format!("loading {}", p.display()))?;
            if raw.n_sensors() != s {
                bail!(
                    "channel count mismatch: checkpoint expects S = {s}, data {} has S = {}",
                    p.display(),
                    raw.n_sensors()
                );
            }
            ckpt.norm.apply(&raw)?
        }
        None => {
            let series = load_dataset(cfg)?;
            if series.n_sensors() != s {
                bail!("channel count mismatch: checkpoint expects S = {s}, dataset has S = {}", series.n_sensors());
            }
            prepare(cfg, &series, Some(&ckpt.norm))?.test
        }
    };
    if inject.is_empty() {
        return Ok(series);
    }
    let onset = cfg.isolation.warmup;
    let mut values = series.values().clone();
    for &(c, beta) in inject {
        if c >= s {
            bail!("injection channel {c} out of range for S = {s}");
        }
        let spec = offsets_to_delta(beta, &[c], &ckpt.norm, onset)?;
        let d = ckpt.norm.delta_to_normalized(&spec.delta)[c];
        let from = onset.min(values.cols());
        for v in &mut values.row_mut(c)[from..] {
            *v += d;
        }
    }
    Ok(series.with_values(values)?)
}

/// Verdicts on consecutive batches of `M` after the warm-up.
pub fn detection_pass(
    cfg: &RunConfig,
    ckpt: &Checkpoint<f64>,
    x: &SensorSeries<f64>,
    rule: &FusionRule,
) -> Result<Vec<BatchVerdict>> {
    let model = ckpt.model()?;
    let gamma = gamma_of(ckpt)?;
    let m = rule.config.m;
    let start = cfg.isolation.warmup;
    let n = x.n_samples();
    if n < start + m {
        bail!("series of {n} samples is too short for one batch of {m} after a warm-up of {start}");
    }
    let batches = (n - start) / m;
    let run = predict_series(&model, x.values(), &FeedMode::OpenLoop, 0, start + batches * m)?;
    let stream = ResidualStream::from_run(x.values(), &run)?;
    let mut coin = Rng::new(cfg.seed).split(20);
    (0..batches)
        .map(|k| {
            let t0 = start + k * m;
            Ok(detect_batch(stream.norms_between(t0, t0 + m)?, gamma, rule, t0, &mut coin)?)
        })
        .collect()
}

/// Deterministic pretty JSON with a trailing newline.
pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Path relative to the output directory, for messages and reports.
pub fn display_name(path: &Path) -> String {
    path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}
