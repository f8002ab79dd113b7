use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::{SmearingResult, SweepResult};

fn csv_err(e: csv::Error) -> crate::error::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::error::Error::Checkpoint(format!("csv: {other:?}")),
    }
}

/// `sweep.csv`: one row per detection batch.
pub fn write_sweep_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        channel: usize,
        beta: f64,
        run: usize,
        verdict: &'static str,
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in &result.points {
        let Some(channel) = p.channel else { continue };
        for (run, &v) in p.verdicts.iter().enumerate() {
            w.serialize(Row { channel, beta: p.beta, run, verdict: if v { "H1" } else { "H0" } }).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `curves.csv`: `P_D` with its interval per `(channel, β)`; the average panel
/// is labelled `avg`.
pub fn write_curves_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        channel: String,
        beta: f64,
        pd: f64,
        ci_lo: f64,
        ci_hi: f64,
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in &result.points {
        w.serialize(Row {
            channel: p.channel.map_or_else(|| "avg".to_string(), |c| c.to_string()),
            beta: p.beta,
            pd: p.pd,
            ci_lo: p.ci.lo,
            ci_hi: p.ci.hi,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `contrib.csv`: one row per `(model, β, sensor)`.
pub fn write_contrib_csv(result: &SmearingResult, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        model: &'a str,
        beta: f64,
        sensor: usize,
        score: f64,
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in &result.rows {
        for (sensor, &score) in r.scores.iter().enumerate() {
            w.serialize(Row { model: &r.model, beta: r.beta, sensor, score }).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<V: Serialize>(value: &V, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
