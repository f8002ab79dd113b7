//! Run configuration: one TOML or JSON document whose defaults are the
//! published model and algorithm parameters.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sfdsfi::dataset::{SplitSpec, SynthConfig};
use sfdsfi::eval::{BatterySpec, SmearingSpec, SweepSpec};
use sfdsfi::predictor::{ModelKind, TrainConfig};
use sfdsfi::sfd::FusionConfig;
use sfdsfi::sfi::{Aggregation, SparseSolveConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Nested `seed` fields are overwritten from it at run time.
    pub seed: u64,
    pub output: PathBuf,
    pub data: DataConfig,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
    pub isolation: IsolationConfig,
    pub sweep: SweepSpec,
    pub smearing: SmearingSpec,
    pub battery: BatterySpec,
    /// Runs of the single-fault battery behind the ACC column.
    pub single_fault_runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output: PathBuf::from("out"),
            data: DataConfig::default(),
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
            isolation: IsolationConfig::default(),
            sweep: SweepSpec::default(),
            smearing: SmearingSpec::default(),
            battery: BatterySpec::default(),
            single_fault_runs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset file; `synth` writes `data.csv` in the output directory when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub sensors: usize,
    pub samples: usize,
    pub generator: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: None, sensors: 8, samples: 60_000, generator: SynthConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Hidden width; 32 for the GRU and 30 for the FFNN when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// FFNN look-back window.
    pub window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: ModelKind::Gru, hidden: None, window: 8 }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        self.hidden.unwrap_or(match self.kind {
            ModelKind::Gru => 32,
            ModelKind::Ffnn => 30,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Greedy,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolationConfig {
    /// SFI integration window length `L`.
    pub l: usize,
    /// Healthy samples a rollout is warmed up on before the batch under test.
    pub warmup: usize,
    /// Per-sample false-alarm rate of the isolation threshold; `α/M` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_fa: Option<f64>,
    pub algo: Algo,
    pub sparse: SparseSolveConfig,
    pub aggregation: Aggregation,
}

impl Default for IsolationConfig {
    fn default() -> Self {
        Self {
            l: 60,
            warmup: 200,
            p_fa: None,
            algo: Algo::Greedy,
            sparse: SparseSolveConfig::default(),
            aggregation: Aggregation::Absolute,
        }
    }
}

impl IsolationConfig {
    pub fn p_fa(&self, fusion: &FusionConfig) -> f64 {
        self.p_fa.unwrap_or(fusion.alpha / fusion.m as f64)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = if is_json(path) {
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        };
        Ok(cfg)
    }

    pub fn render(&self, path: &Path) -> Result<String> {
        Ok(if is_json(path) { serde_json::to_string_pretty(self)? + "\n" } else { toml::to_string_pretty(self)? })
    }

    /// Checks every nested section before any work starts.
    pub fn validate(&self) -> Result<()> {
        let s = self.data.sensors;
        if s < 2 {
            bail!("config field `data.sensors`: need at least two sensors");
        }
        self.data.generator.validate(s)?;
        self.split.validate()?;
        self.train.validate(s)?;
        self.fusion.resolve()?;
        self.isolation.sparse.validate()?;
        if self.isolation.l == 0 {
            bail!("config field `isolation.l`: window length must be positive");
        }
        if let Some(p) = self.isolation.p_fa {
            if !(p > 0.0 && p < 1.0) {
                bail!("config field `isolation.p_fa`: must lie in (0, 1), got {p}");
            }
        }
        if self.model.window == 0 || self.model.hidden() == 0 {
            bail!("config field `model`: window and hidden width must be positive");
        }
        self.sweep.validate(s)?;
        if self.smearing.beta_grid.is_empty() {
            bail!("config field `smearing.beta_grid`: must not be empty");
        }
        if self.smearing.channel >= s {
            bail!("config field `smearing.channel`: {} out of range for {s} sensors", self.smearing.channel);
        }
        self.battery.validate(s)?;
        Ok(())
    }

    /// Pushes the master seed into every nested seeded section.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.sweep.seed = seed;
        self.battery.seed = seed;
    }

    pub fn data_path(&self) -> PathBuf {
        self.data.path.clone().unwrap_or_else(|| self.output.join("data.csv"))
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}
