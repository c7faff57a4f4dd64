//! The resolved configuration of one command invocation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainPairSpec, EncodeOptions};
use crate::embeddings::SkipgramConfig;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::network::NetworkConfig;
use crate::optim::TrainConfig;
use crate::seed::derive_seed;
use crate::transfer::InitStrategy;

/// Every setting a command reads. Serialized next to its outputs, a file of
/// this type reproduces the run on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Initialization and training seeds derive from it.
    pub seed: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub encode: EncodeOptions,
    pub init_strategy: InitStrategy,
    /// Documents sampled from the training corpus; `None` keeps all.
    pub few_shot: Option<usize>,
    pub jobs: usize,
    pub repeats: usize,
    pub grid: GridSpec,
    pub embed: SkipgramConfig,
    pub synth: DomainPairSpec,
    /// Files the command read, by role. Informational: flags still name the
    /// inputs when rerunning.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            encode: EncodeOptions::default(),
            init_strategy: InitStrategy::All,
            few_shot: None,
            jobs: 1,
            repeats: 1,
            grid: GridSpec::default(),
            embed: SkipgramConfig::default(),
            synth: DomainPairSpec::default(),
            inputs: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("seed must fit in a signed 64-bit integer"));
        }
        self.network.validate()?;
        self.train.validate()?;
        self.grid.validate()?;
        self.embed.validate()?;
        if self.jobs == 0 || self.repeats == 0 {
            return Err(Error::config("jobs and repeats must be at least 1"));
        }
        if self.few_shot == Some(0) {
            return Err(Error::config("few-shot sample size must be at least 1"));
        }
        Ok(())
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, 0)
    }

    /// The training settings with the seed derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, 1),
            ..self.train.clone()
        }
    }

    pub fn sample_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = RunConfig { seed: 9, few_shot: Some(10), ..RunConfig::default() };
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial = RunConfig::from_toml("seed = 3\n[train]\nepochs = 7\n").unwrap();
        assert_eq!(partial.train.epochs, 7);
        assert_eq!(partial.train.batch_size, 64);
        assert!(RunConfig::from_toml("sede = 3").is_err());
    }
}
