use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::residuals::ResidualProfile;
use crate::scalar::Scalar;

use super::{FfnnModel, GruModel, Predictor, PredictorState, TrainConfig, Trainable};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gru,
    Ffnn,
}

/// Either trainable architecture behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum Model<T> {
    Gru(GruModel<T>),
    Ffnn(FfnnModel<T>),
}

impl<T: Scalar> Model<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Gru(_) => ModelKind::Gru,
            Model::Ffnn(_) => ModelKind::Ffnn,
        }
    }

    pub fn params(&self) -> &[T] {
        match self {
            Model::Gru(m) => m.params(),
            Model::Ffnn(m) => m.params(),
        }
    }
}

impl<T: Scalar> Predictor<T> for Model<T> {
    fn n_sensors(&self) -> usize {
        match self {
            Model::Gru(m) => m.n_sensors(),
            Model::Ffnn(m) => m.n_sensors(),
        }
    }

    fn initial_state(&self) -> PredictorState<T> {
        match self {
            Model::Gru(m) => m.initial_state(),
            Model::Ffnn(m) => m.initial_state(),
        }
    }

    fn step(&self, input: &[T], state: &mut PredictorState<T>, out: &mut [T]) -> Result<bool> {
        match self {
            Model::Gru(m) => m.step(input, state, out),
            Model::Ffnn(m) => m.step(input, state, out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shapes {
    pub sensors: usize,
    /// GRU hidden units or FFNN hidden-layer width.
    pub hidden: usize,
    /// FFNN look-back window; absent for the GRU.
    pub window: Option<usize>,
}

/// Versioned, self-describing model file. Floats are written in shortest
/// round-trip form, so a reload reproduces the parameters bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub shapes: Shapes,
    pub params: Vec<T>,
    pub norm: NormStats<T>,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub profile: Option<ResidualProfile>,
    /// Threshold for the isolation window, usually calibrated at a lower
    /// false-alarm rate than the detector's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isolation_profile: Option<ResidualProfile>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(
        model: &Model<T>,
        norm: NormStats<T>,
        train_config: TrainConfig,
        profile: Option<ResidualProfile>,
    ) -> Self {
        let shapes = match model {
            Model::Gru(m) => Shapes { sensors: m.n_sensors(), hidden: m.hidden_size(), window: None },
            Model::Ffnn(m) => Shapes { sensors: m.n_sensors(), hidden: m.hidden_size(), window: Some(m.window()) },
        };
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_kind: model.kind(),
            shapes,
            params: model.params().to_vec(),
            norm,
            seed: train_config.seed,
            train_config,
            profile,
            isolation_profile: None,
        }
    }

    pub fn with_isolation_profile(mut self, profile: ResidualProfile) -> Self {
        self.isolation_profile = Some(profile);
        self
    }

    pub fn model(&self) -> Result<Model<T>> {
        let Shapes { sensors, hidden, window } = self.shapes;
        if self.norm.mean.len() != sensors || self.norm.std.len() != sensors {
            return Err(Error::Checkpoint("normalization stats do not match sensor count".into()));
        }
        match (self.model_kind, window) {
            (ModelKind::Gru, None) => Ok(Model::Gru(GruModel::from_params(sensors, hidden, self.params.clone())?)),
            (ModelKind::Ffnn, Some(w)) => {
                Ok(Model::Ffnn(FfnnModel::from_params(sensors, w, hidden, self.params.clone())?))
            }
            (kind, w) => Err(Error::Checkpoint(format!("{kind:?} model with window {w:?}"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
