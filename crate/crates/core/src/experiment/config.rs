use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ProblemConfig;
use crate::training::TrainConfig;
use crate::unfold::{DcMode, LayerSpec, UnfoldConfig};

/// Unfolding knobs as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnfoldSpec {
    pub steps: usize,
    pub gamma: f64,
    pub tau_init: f64,
    /// Minibatch size for stochastic mode; ignored in full-batch mode.
    #[serde(default)]
    pub minibatch: Option<usize>,
    pub mode: DcMode,
    #[serde(default)]
    pub seed: u64,
}

impl UnfoldSpec {
    pub fn to_config(&self, components: usize) -> Result<UnfoldConfig> {
        let cfg = match self.mode {
            DcMode::FullBatch => UnfoldConfig::full_batch(self.steps, self.gamma, components),
            DcMode::Stochastic => {
                let b = self.minibatch.ok_or_else(|| {
                    Error::InvalidArgument("stochastic mode needs a minibatch size".into())
                })?;
                UnfoldConfig::stochastic(self.steps, self.gamma, b, self.seed)
            }
        };
        let cfg = UnfoldConfig {
            seed: self.seed,
            ..cfg
        };
        cfg.validate(components)?;
        Ok(cfg)
    }
}

/// Config of `train` / `pretrain` runs. Exactly one of `problem` (synthesize
/// in memory) and `data` (a generated dataset directory) is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub problem: Option<ProblemConfig>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    pub unfold: UnfoldSpec,
    #[serde(default)]
    pub network: LayerSpec,
    #[serde(default)]
    pub network_seed: u64,
    pub train: TrainConfig,
    /// Config of the warm-up stage run by `pretrain`.
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    /// Checkpoint whose `θ` initializes training.
    #[serde(default)]
    pub warm_start: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::json("<config>", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not require the forward model.
    pub fn validate(&self) -> Result<()> {
        match (&self.problem, &self.data) {
            (Some(p), None) => p.validate()?,
            (None, Some(_)) => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "exactly one of `problem` and `data` must be given".into(),
                ))
            }
        }
        self.network.validate()?;
        self.train.validate()?;
        if let Some(p) = &self.pretrain {
            p.validate()?;
        }
        if let Some(p) = &self.problem {
            self.unfold.to_config(p.model.components())?;
        } else if self.unfold.steps == 0 || !(self.unfold.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "invalid unfold section {:?}",
                self.unfold
            )));
        }
        Ok(())
    }
}
