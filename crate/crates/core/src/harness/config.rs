//! Training configuration in a flat `key = value` text format.
//!
//! ```text
//! format_version = 1
//! # comments start with '#'
//! model = spectnt
//! preset = desk
//! seed = 7
//! ```
//!
//! Unknown keys are rejected. `STRUCTURA_SEED` in the environment
//! overrides `seed`.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::optim::AdamConfig;
use crate::model::{ModelConfig, ModelKind};

use super::augment::AugmentConfig;

pub const CONFIG_VERSION: u32 = 1;
pub const SEED_ENV: &str = "STRUCTURA_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub manifest: Option<PathBuf>,
    pub model: ModelKind,
    /// `desk`, `paper` or `tiny`.
    pub preset: String,
    pub seed: u64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Hop between enumerated training chunks, seconds.
    pub chunk_hop: f64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    /// Fraction of training songs held out for validation when the
    /// manifest has no validation split.
    pub validation_fraction: f64,
    pub output_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            model: ModelKind::Spectnt,
            preset: "desk".into(),
            seed: 0,
            epochs: 100,
            batches_per_epoch: 50,
            batch_size: 16,
            patience: 2,
            chunk_hop: 3.0,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            augment: true,
            augmentation: AugmentConfig::default(),
            validation_fraction: 0.1,
            output_dir: PathBuf::from("run"),
        }
    }
}

impl TrainConfig {
    /// The full-scale schedule: 500 batches of 128 for up to 100 epochs.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            batches_per_epoch: 500,
            batch_size: 128,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut cfg = match self.preset.as_str() {
            "desk" => ModelConfig::desk(),
            "paper" => ModelConfig::paper(),
            "tiny" => ModelConfig::miniature(125, 80),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.model_config()?;
        if self.batch_size == 0 || self.batches_per_epoch == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "epochs, batches_per_epoch and batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        if !(self.adam.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        Ok(())
    }

    /// Applies `STRUCTURA_SEED` if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an integer")))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut version = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let at = |e: Error| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            };
            if key == "format_version" {
                version = Some(parse_value::<u32>(key, value).map_err(at)?);
                continue;
            }
            cfg.set(key, value).map_err(at)?;
        }
        match version {
            Some(CONFIG_VERSION) => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "unsupported config format_version {v}"
                )))
            }
            None => return Err(Error::Config("config is missing format_version".into())),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the environment override.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                cfg.manifest = Some(path.parent().unwrap_or(Path::new("")).join(m));
            }
        }
        cfg.apply_env()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "model" => self.model = parse_value(key, value)?,
            "preset" => self.preset = value.to_string(),
            "seed" => self.seed = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batches_per_epoch" => self.batches_per_epoch = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "chunk_hop" => self.chunk_hop = parse_value(key, value)?,
            "learning_rate" => self.adam.learning_rate = parse_value(key, value)?,
            "weight_decay" => self.adam.weight_decay = parse_value(key, value)?,
            "boundary_weight" => self.loss.boundary_weight = parse_value(key, value)?,
            "function_weight" => self.loss.function_weight = parse_value(key, value)?,
            "ctl_weight" => self.loss.ctl_weight = parse_value(key, value)?,
            "boundary_pos_weight" => self.loss.boundary_pos_weight = parse_value(key, value)?,
            "function_pos_weight" => self.loss.function_pos_weight = parse_value(key, value)?,
            "augment" => self.augment = parse_value(key, value)?,
            "augment_filter" => self.augmentation.filter = parse_value(key, value)?,
            "validation_fraction" => self.validation_fraction = parse_value(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Renders every key; `parse(to_text())` gives back the same config.
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("format_version = {CONFIG_VERSION}")];
        if let Some(m) = &self.manifest {
            lines.push(format!("manifest = {}", m.display()));
        }
        let kind = match self.model {
            ModelKind::Spectnt => "spectnt",
            ModelKind::Instant => "instant",
        };
        lines.extend([
            format!("model = {kind}"),
            format!("preset = {}", self.preset),
            format!("seed = {}", self.seed),
            format!("epochs = {}", self.epochs),
            format!("batches_per_epoch = {}", self.batches_per_epoch),
            format!("batch_size = {}", self.batch_size),
            format!("patience = {}", self.patience),
            format!("chunk_hop = {:?}", self.chunk_hop),
            format!("learning_rate = {:?}", self.adam.learning_rate),
            format!("weight_decay = {:?}", self.adam.weight_decay),
            format!("boundary_weight = {:?}", self.loss.boundary_weight),
            format!("function_weight = {:?}", self.loss.function_weight),
            format!("ctl_weight = {:?}", self.loss.ctl_weight),
            format!("boundary_pos_weight = {:?}", self.loss.boundary_pos_weight),
            format!("function_pos_weight = {:?}", self.loss.function_pos_weight),
            format!("augment = {}", self.augment),
            format!("augment_filter = {}", self.augmentation.filter),
            format!("validation_fraction = {:?}", self.validation_fraction),
            format!("output_dir = {}", self.output_dir.display()),
        ]);
        lines.join("\n") + "\n"
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}
