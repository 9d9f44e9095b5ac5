//! Resolved run configuration, stored as TOML next to every run's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::SynthConfig;
use crate::grpo::TrainConfig;
use crate::policy::InitConfig;
use crate::rewards::RewardConfig;
use crate::segmenter::SegBackend;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Training and evaluation data. Paths win over synthesis when given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub n_train: usize,
    pub n_eval: usize,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_path: None,
            eval_path: None,
            n_train: 1000,
            n_eval: 200,
            train_seed: 7,
            eval_seed: 1007,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub rewards: RewardConfig,
    pub init: InitConfig,
    pub data: DataConfig,
    pub backend: SegBackend,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            init_seed: 0,
            train: TrainConfig::default(),
            rewards: RewardConfig::default(),
            init: InitConfig::default(),
            data: DataConfig::default(),
            backend: SegBackend::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&s).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_toml()).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rewards.validate().map_err(ConfigError::Invalid)?;
        self.backend
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let s = &self.data.synth;
        if s.min_objects > s.max_objects {
            return Err(ConfigError::Invalid("synth.min_objects exceeds max_objects".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.train.learning_rate = 0.5;
        c.data.train_path = Some("a/b.jsonl".into());
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_toml("[train]\nsteps = 5\n").unwrap();
        assert_eq!(c.train.steps, 5);
        assert_eq!(c.rewards, RewardConfig::default());
    }
}
