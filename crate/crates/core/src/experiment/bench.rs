use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{synthesize, ProblemConfig};
use crate::forward::sample_indices;
use crate::metrics::Summary;
use crate::training::{train_unfolded, Checkpoint, Schedule, TrainConfig};
use crate::unfold::{sgdnet_forward, LayerSpec, PriorNet, UnfoldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub problem: ProblemConfig,
    pub steps: usize,
    pub gamma: f64,
    #[serde(default = "default_tau")]
    pub tau_init: f64,
    #[serde(default)]
    pub network: LayerSpec,
    pub minibatch_sizes: Vec<usize>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_tau() -> f64 {
    2.0
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub minibatch: usize,
    pub repeats: usize,
    /// One unfolded forward pass on one sample.
    pub forward_ms_mean: f64,
    pub forward_ms_std: f64,
    /// The data-consistency work of one forward pass: `Q` minibatch
    /// gradients of `B` components.
    pub dc_ms_mean: f64,
    pub dc_ms_std: f64,
    /// One training epoch over the training set.
    pub epoch_ms_mean: f64,
    pub epoch_ms_std: f64,
}

impl BenchRow {
    pub const HEADER: [&'static str; 8] = [
        "minibatch",
        "repeats",
        "forward_ms_mean",
        "forward_ms_std",
        "dc_ms_mean",
        "dc_ms_std",
        "epoch_ms_mean",
        "epoch_ms_std",
    ];

    pub fn record(&self) -> [String; 8] {
        [
            self.minibatch.to_string(),
            self.repeats.to_string(),
            format!("{:.4}", self.forward_ms_mean),
            format!("{:.4}", self.forward_ms_std),
            format!("{:.4}", self.dc_ms_mean),
            format!("{:.4}", self.dc_ms_std),
            format!("{:.4}", self.epoch_ms_mean),
            format!("{:.4}", self.epoch_ms_std),
        ]
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Wall-clock of the forward pass, its data-consistency part and one
/// training epoch for every minibatch size, sorted by minibatch size.
pub fn bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repeats == 0 || cfg.minibatch_sizes.is_empty() {
        return Err(Error::InvalidArgument(
            "bench needs repeats >= 1 and at least one minibatch size".into(),
        ));
    }
    let problem = synthesize(&cfg.problem)?;
    let model = &problem.model;
    let count = model.num_components();
    let net = PriorNet::random(cfg.network, cfg.tau_init, cfg.seed);
    let sample = problem.train.get(0);
    let mut sizes = cfg.minibatch_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();

    let mut rows = Vec::with_capacity(sizes.len());
    for &b in &sizes {
        let ucfg = UnfoldConfig::stochastic(cfg.steps, cfg.gamma, b, cfg.seed);
        ucfg.validate(count)?;
        let train_cfg = TrainConfig::sgd(1, Schedule::Constant { eta: 1e-6 }, cfg.seed);
        let (mut fwd, mut dc, mut epoch) = (Vec::new(), Vec::new(), Vec::new());
        for r in 0..cfg.repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + r as u64);
            let t = Instant::now();
            let out = sgdnet_forward(&sample.init, &sample.y, model, &net, &ucfg, &mut rng)?;
            fwd.push(ms(t));
            drop(out);

            let draws: Vec<Vec<usize>> =
                (0..cfg.steps).map(|_| sample_indices(b, count, &mut rng)).collect();
            let t = Instant::now();
            for idx in &draws {
                std::hint::black_box(model.minibatch_gradient(&sample.init, &sample.y, idx)?);
            }
            dc.push(ms(t));

            let start = Checkpoint::initial(net.clone(), cfg.seed + r as u64);
            let t = Instant::now();
            train_unfolded(&problem.train, model, start, &ucfg, &train_cfg, &mut ())?;
            epoch.push(ms(t));
        }
        let (f, d, e) = (
            Summary::of(&fwd).expect("repeats >= 1"),
            Summary::of(&dc).expect("repeats >= 1"),
            Summary::of(&epoch).expect("repeats >= 1"),
        );
        rows.push(BenchRow {
            minibatch: b,
            repeats: cfg.repeats,
            forward_ms_mean: f.mean,
            forward_ms_std: f.std,
            dc_ms_mean: d.mean,
            dc_ms_std: d.std,
            epoch_ms_mean: e.mean,
            epoch_ms_std: e.std,
        });
    }
    Ok(rows)
}
