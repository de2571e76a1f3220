//! Run configuration: a versioned TOML tree with every default embedded, so
//! an empty file runs the standard experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::ModelConfig;
use crate::error::{io_at, Error, Result};
use crate::game::WorldConfig;
use crate::trainer::TrainerConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Number of distinct expert dialogues (one per sampled world).
    pub episodes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub qgen_learning_rate: f64,
    pub guesser_learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { episodes: 2048, epochs: 20, batch_size: 16, qgen_learning_rate: 0.003, guesser_learning_rate: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Record wall-clock time per epoch. With `false` the `wall_ms` column is
    /// written as 0 and metrics files are byte-reproducible.
    pub timing: bool,
    /// Append every training episode to `episodes.jsonl`.
    pub log_episodes: bool,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_VERSION,
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            timing: true,
            log_episodes: false,
            world: WorldConfig::default(),
            model: ModelConfig::default(),
            trainer: TrainerConfig::default(),
            pretrain: PretrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_at(path))?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config format_version {} unsupported (expected {CONFIG_VERSION})",
                self.format_version
            )));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in a signed 64-bit integer".into()));
        }
        self.world.validate()?;
        self.model.validate()?;
        self.trainer.validate()?;
        let p = &self.pretrain;
        if p.batch_size == 0 || !(p.qgen_learning_rate > 0.0) || !(p.guesser_learning_rate > 0.0) {
            return Err(Error::Config("pretrain batch size and learning rates must be positive".into()));
        }
        if self.eval.episodes == 0 {
            return Err(Error::Config("eval.episodes must be >= 1".into()));
        }
        Ok(())
    }
}
