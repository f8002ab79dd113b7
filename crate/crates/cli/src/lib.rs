//! Command-line driver for the sensor fault detection and isolation pipeline.
//!
//! `synth → train → detect → isolate → sweep / report`, all driven by one
//! configuration document and one master seed.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub use commands::{run, Outcome};
pub use config::{Algo, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "sfdsfi", version, about = "Sensor fault detection and isolation with learned predictors")]
pub struct Cli {
    /// Configuration file (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configured one.
    #[arg(long, global = true, env = "SFDSFI_SEED")]
    pub seed: Option<u64>,
    /// Use separate detector (no disentanglement) and isolator models.
    #[arg(long, global = true)]
    pub two_stage: bool,
    /// Disentanglement weight for training.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Isolation algorithm.
    #[arg(long, global = true, value_enum)]
    pub algo: Option<Algo>,
    /// L1 weight of the sparse bias solve.
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Worker threads for experiments; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Overwrite existing files / isolate without a fault verdict.
    #[arg(long, global = true)]
    pub force: bool,
    /// Output directory (for `init`, the config file to write).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a configuration template with every default spelled out.
    Init,
    /// Generate the synthetic dataset.
    Synth,
    /// Train the predictor(s) and calibrate detection thresholds.
    Train,
    /// Run the detector over data and print one JSON verdict per batch.
    Detect(DataArgs),
    /// Isolate faulty sensors after the first fault verdict.
    Isolate(DataArgs),
    /// Offset sweeps, contribution plots and the one-/two-stage comparison.
    Sweep,
    /// Isolation batteries and the method summary table.
    Report,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct DataArgs {
    /// Raw-unit CSV to examine instead of the configured test split.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Add an offset of level BETA to channel CH (`CH:BETA`), repeatable.
    #[arg(long = "inject", value_name = "CH:BETA")]
    pub inject: Vec<String>,
}

/// Process entry point: parses the arguments, runs the command and maps the
/// outcome to an exit code (0 clean, 2 fault declared, 1 usage or
/// configuration error, 3 numeric failure).
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::FaultDeclared) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e.chain().any(|c| c.downcast_ref::<sfdsfi::Error>().is_some_and(|e| e.is_numeric()));
            ExitCode::from(if numeric { 3 } else { 1 })
        }
    }
}
