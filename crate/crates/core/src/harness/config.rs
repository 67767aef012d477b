use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{toml_error, ModelConfig};

/// Piecewise-constant learning rate: `initial`, divided by `factor` at each
/// decay epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    #[serde(default)]
    pub decay_epochs: Vec<usize>,
    #[serde(default = "default_factor")]
    pub factor: f64,
    pub epochs: usize,
}

fn default_factor() -> f64 {
    10.0
}

impl LrSchedule {
    pub fn constant(rate: f64, epochs: usize) -> Self {
        Self {
            initial: rate,
            decay_epochs: Vec::new(),
            factor: default_factor(),
            epochs,
        }
    }

    /// 0.1, divided by 10 at epochs 30 and 40, 50 epochs.
    pub fn ntu() -> Self {
        Self {
            initial: 0.1,
            decay_epochs: vec![30, 40],
            factor: 10.0,
            epochs: 50,
        }
    }

    /// 0.1, divided by 10 at epochs 45 and 55, 65 epochs.
    pub fn kinetics() -> Self {
        Self {
            initial: 0.1,
            decay_epochs: vec![45, 55],
            factor: 10.0,
            epochs: 65,
        }
    }

    /// Desk-scale toy runs: 0.1, divided by 10 at epochs 40 and 60, 80 epochs.
    pub fn desk() -> Self {
        Self {
            initial: 0.1,
            decay_epochs: vec![40, 60],
            factor: 10.0,
            epochs: 80,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial.is_finite() && self.initial > 0.0) {
            return Err(Error::Config(format!(
                "initial rate must be positive, got {}",
                self.initial
            )));
        }
        if !(self.factor.is_finite() && self.factor > 0.0) {
            return Err(Error::Config(format!(
                "decay factor must be positive, got {}",
                self.factor
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("schedule needs at least one epoch".into()));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "decay epochs must increase strictly: {:?}",
                self.decay_epochs
            )));
        }
        if let Some(&last) = self.decay_epochs.last() {
            if last >= self.epochs {
                return Err(Error::Config(format!(
                    "decay epoch {last} is not before epoch {}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch` (counting from 0).
pub fn lr_at(epoch: usize, schedule: &LrSchedule) -> Result<f64> {
    if epoch >= schedule.epochs {
        return Err(Error::OutOfRange(format!(
            "epoch {epoch} outside a {}-epoch schedule",
            schedule.epochs
        )));
    }
    let decays = schedule.decay_epochs.iter().filter(|&&e| epoch >= e).count();
    Ok(schedule.initial / schedule.factor.powi(decays as i32))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    #[serde(default = "default_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
}

fn default_decay() -> f64 {
    1e-4
}

fn default_momentum() -> f64 {
    0.9
}

fn default_batch() -> usize {
    8
}

impl TrainConfig {
    pub fn new(schedule: LrSchedule) -> Self {
        Self {
            schedule,
            weight_decay: default_decay(),
            momentum: default_momentum(),
            batch_size: default_batch(),
            seed: 0,
            precision: Precision::default(),
        }
    }

    pub fn ntu() -> Self {
        Self::new(LrSchedule::ntu())
    }

    pub fn kinetics() -> Self {
        Self::new(LrSchedule::kinetics())
    }

    pub fn desk() -> Self {
        Self::new(LrSchedule::desk())
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// A model and its training recipe, as read from one config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Dataset directory; the CLI falls back to `TAGCN_DATA_DIR`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn from_toml(text: &str, source_name: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| toml_error(&e, text, source_name))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text, &path.as_ref().display().to_string())
    }
}
