use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unfold::{LayerSpec, PriorNet, UnfoldConfig};

/// Adam moments; empty for plain SGD.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Complete training state. Continuing from a restored checkpoint reproduces
/// the uninterrupted run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: PriorNet,
    pub iteration: usize,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub optimizer: OptimizerState,
    pub seed: u64,
    pub last_loss: Option<f64>,
    /// Unfolding the network was trained for, if any.
    pub unfold: Option<UnfoldConfig>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    layer_spec: LayerSpec,
    layer_spec_hash: String,
    tau: f64,
    steps: Option<usize>,
    gamma: Option<f64>,
    unfold: Option<UnfoldConfig>,
    seed: u64,
    epoch: usize,
    iteration: usize,
    last_loss: Option<f64>,
    rng: ChaCha8Rng,
    optimizer: OptimizerState,
}

pub const PARAMS_FILE: &str = "params.bin";
pub const META_FILE: &str = "checkpoint.json";

impl Checkpoint {
    /// Fresh state at iteration 0 with the training stream seeded by `seed`.
    pub fn initial(net: PriorNet, seed: u64) -> Self {
        Self {
            net,
            iteration: 0,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            optimizer: OptimizerState::default(),
            seed,
            last_loss: None,
            unfold: None,
        }
    }

    pub fn with_unfold(mut self, cfg: UnfoldConfig) -> Self {
        self.unfold = Some(cfg);
        self
    }

    /// Writes `params.bin` with its `params.json` header, and
    /// `checkpoint.json`, into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Tensor::vector(self.net.theta().to_vec()).save(dir.join(PARAMS_FILE))?;
        let meta = CheckpointMeta {
            layer_spec: self.net.spec(),
            layer_spec_hash: self.net.spec().hash(),
            tau: self.net.tau(),
            steps: self.unfold.as_ref().map(|u| u.steps),
            gamma: self.unfold.as_ref().map(|u| u.gamma),
            unfold: self.unfold.clone(),
            seed: self.seed,
            epoch: self.epoch,
            iteration: self.iteration,
            last_loss: self.last_loss,
            rng: self.rng.clone(),
            optimizer: self.optimizer.clone(),
        };
        let path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if meta.layer_spec.hash() != meta.layer_spec_hash {
            return Err(Error::CheckpointMismatch(format!(
                "{}: layer spec hash does not match {:?}",
                path.display(),
                meta.layer_spec
            )));
        }
        let theta = Tensor::load(dir.join(PARAMS_FILE))?.into_data();
        let net = PriorNet::from_parts(meta.layer_spec, theta, meta.tau)
            .map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
        Ok(Self {
            net,
            iteration: meta.iteration,
            epoch: meta.epoch,
            rng: meta.rng,
            optimizer: meta.optimizer,
            seed: meta.seed,
            last_loss: meta.last_loss,
            unfold: meta.unfold,
        })
    }
}
