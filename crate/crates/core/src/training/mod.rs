//! Supervised training of unfolded networks and warm-start pretraining of
//! the artifact-removal network.
//!
//! One iteration `k` draws a sample index `j_k` uniformly, a fresh stream of
//! per-step component draws for that sample, evaluates the single-sample
//! gradient and applies one optimizer update.

mod checkpoint;
mod objective;

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, MeasurementSet};
use crate::tensor::Tensor;
use crate::unfold::{ParamGrad, PriorNet, UnfoldConfig};

pub use checkpoint::{Checkpoint, OptimizerState};
pub use objective::{
    full_objective_gradient, mse_loss, mse_loss_grad, per_sample_gradients,
    pretrain_loss_grad, sample_loss_grad,
};

/// One training pair with its precomputed initialization `x̃ = Aᴴy` (or FBP).
#[derive(Debug, Clone)]
pub struct Sample {
    pub truth: Tensor,
    pub y: MeasurementSet,
    pub init: Tensor,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        };
        let shape = first.truth.shape().to_vec();
        for s in &samples {
            s.truth.ensure_shape(&shape)?;
            s.init.ensure_shape(&shape)?;
        }
        Ok(Self { samples })
    }

    /// Builds samples from ground truths and measurements with `init`.
    pub fn from_measurements(
        truths: Vec<Tensor>,
        ys: Vec<MeasurementSet>,
        init: impl Fn(&MeasurementSet) -> Result<Tensor>,
    ) -> Result<Self> {
        if truths.len() != ys.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ground truths but {} measurement sets",
                truths.len(),
                ys.len()
            )));
        }
        let samples = truths
            .into_iter()
            .zip(ys)
            .map(|(truth, y)| {
                let init = init(&y)?;
                Ok(Sample { truth, y, init })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, j: usize) -> &Sample {
        &self.samples[j]
    }
}

/// Learning-rate schedule indexed by the zero-based iteration `k` out of `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    Constant { eta: f64 },
    /// `η = 1/(L·√K)` for all `k`.
    InverseSqrt { lipschitz: f64 },
    /// `η·factor^⌊k/period⌋`.
    StepDecay { eta: f64, factor: f64, period: usize },
}

impl Schedule {
    pub fn eta(&self, k: usize, total: usize) -> f64 {
        match *self {
            Schedule::Constant { eta } => eta,
            Schedule::InverseSqrt { lipschitz } => 1.0 / (lipschitz * (total.max(1) as f64).sqrt()),
            Schedule::StepDecay {
                eta,
                factor,
                period,
            } => eta * factor.powi((k / period) as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Schedule::Constant { eta } => eta > 0.0 && eta.is_finite(),
            Schedule::InverseSqrt { lipschitz } => lipschitz > 0.0 && lipschitz.is_finite(),
            Schedule::StepDecay {
                eta,
                factor,
                period,
            } => eta > 0.0 && eta.is_finite() && factor > 0.0 && factor.is_finite() && period > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid schedule {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
    /// Iterations per epoch; defaults to the dataset size.
    #[serde(default)]
    pub iterations_per_epoch: Option<usize>,
    /// Samples averaged per update.
    #[serde(default = "one")]
    pub image_batch: usize,
    /// Rescale gradients whose norm exceeds this value.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Record the full-data full-batch `‖∇F‖²` every this many iterations
    /// (0 disables).
    #[serde(default)]
    pub grad_norm_period: usize,
    /// Hand a checkpoint to the snapshot callback every this many
    /// iterations (0 disables).
    #[serde(default)]
    pub snapshot_period: usize,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn sgd(epochs: usize, schedule: Schedule, seed: u64) -> Self {
        Self {
            epochs,
            schedule,
            optimizer: Optimizer::Sgd,
            seed,
            iterations_per_epoch: None,
            image_batch: 1,
            clip_norm: None,
            grad_norm_period: 0,
            snapshot_period: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.image_batch == 0 {
            return Err(Error::InvalidArgument("image_batch must be >= 1".into()));
        }
        if self.iterations_per_epoch == Some(0) {
            return Err(Error::InvalidArgument(
                "iterations_per_epoch must be >= 1".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn per_epoch(&self, samples: usize) -> usize {
        self.iterations_per_epoch.unwrap_or(samples)
    }

    pub fn total_iterations(&self, samples: usize) -> usize {
        self.epochs * self.per_epoch(samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub epoch: usize,
    pub loss: f64,
    pub eta: f64,
    pub grad_norm_sq_full: Option<f64>,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// `(iteration, ‖∇F‖²)` for rows where it was recorded.
    pub fn grad_norms(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.grad_norm_sq_full.map(|g| (r.iteration, g)))
            .collect()
    }

    /// Mean loss over the rows of `epoch`.
    pub fn epoch_mean_loss(&self, epoch: usize) -> Option<f64> {
        let losses: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.loss)
            .collect();
        (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "iteration",
            "epoch",
            "loss",
            "eta",
            "grad_norm_sq_full",
            "wallclock_ms",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.epoch.to_string(),
                format!("{:e}", r.loss),
                format!("{:e}", r.eta),
                r.grad_norm_sq_full.map(|g| format!("{g:e}")).unwrap_or_default(),
                format!("{:.3}", r.wallclock_ms),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_finite(g: &ParamGrad, what: &str) -> Result<()> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `θ′ = θ − η∇θ`, `τ′ = τ − η∇τ`.
pub fn sgd_update(net: &mut PriorNet, grads: &ParamGrad, eta: f64) -> Result<()> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {eta}")));
    }
    check_finite(grads, "parameter gradient")?;
    net.apply_update(grads, -eta);
    Ok(())
}

fn optimizer_step(
    net: &mut PriorNet,
    state: &mut OptimizerState,
    optimizer: Optimizer,
    grads: &ParamGrad,
    eta: f64,
) -> Result<()> {
    match optimizer {
        Optimizer::Sgd => sgd_update(net, grads, eta),
        Optimizer::Adam { beta1, beta2, eps } => {
            check_finite(grads, "parameter gradient")?;
            let g = grads.to_vec();
            if state.m.len() != g.len() {
                state.m = vec![0.0; g.len()];
                state.v = vec![0.0; g.len()];
                state.t = 0;
            }
            state.t += 1;
            let c1 = 1.0 - beta1.powi(state.t as i32);
            let c2 = 1.0 - beta2.powi(state.t as i32);
            let mut delta = Vec::with_capacity(g.len());
            for ((m, v), gi) in state.m.iter_mut().zip(state.v.iter_mut()).zip(&g) {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                delta.push((*m / c1) / ((*v / c2).sqrt() + eps));
            }
            let tau = delta.pop().expect("tau entry");
            net.apply_update(&ParamGrad { theta: delta, tau }, -eta);
            Ok(())
        }
    }
}

/// Callbacks observed by [`fit`].
pub trait TrainObserver {
    fn snapshot(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

impl<F: FnMut(&Checkpoint) -> Result<()>> TrainObserver for F {
    fn snapshot(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self(checkpoint)
    }
}

/// Generic stochastic training loop shared by end-to-end training,
/// pretraining and denoiser training.
///
/// `loss_grad(net, j, rng)` returns the loss and gradient of sample `j`,
/// drawing any extra randomness from `rng`. `full_grad(net)` evaluates the
/// deterministic full objective gradient for the trace.
pub fn fit<L, G>(
    start: Checkpoint,
    samples: usize,
    cfg: &TrainConfig,
    mut loss_grad: L,
    full_grad: Option<G>,
    observer: &mut dyn TrainObserver,
) -> Result<(Checkpoint, TrainTrace)>
where
    L: FnMut(&PriorNet, usize, &mut ChaCha8Rng) -> Result<(f64, ParamGrad)>,
    G: Fn(&PriorNet) -> Result<ParamGrad>,
{
    cfg.validate()?;
    if samples == 0 {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let per_epoch = cfg.per_epoch(samples);
    let total = cfg.total_iterations(samples);
    let started = Instant::now();
    let mut ckpt = start;
    let mut trace = TrainTrace::default();

    while ckpt.iteration < total {
        let k = ckpt.iteration;
        let epoch = k / per_epoch;
        let eta = cfg.schedule.eta(k, total);
        let grad_norm_sq_full = match (&full_grad, cfg.grad_norm_period) {
            (Some(f), p) if p > 0 && k.is_multiple_of(p) => Some(f(&ckpt.net)?.norm_sq()),
            _ => None,
        };

        let mut rng = ckpt.rng.clone();
        let mut loss = 0.0;
        let mut grad = ParamGrad::zeros(ckpt.net.theta().len());
        for _ in 0..cfg.image_batch {
            let j = rng.random_range(0..samples);
            let mut sample_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
            let (l, g) = loss_grad(&ckpt.net, j, &mut sample_rng)?;
            loss += l;
            grad.axpy(1.0, &g);
        }
        let inv = 1.0 / cfg.image_batch as f64;
        loss *= inv;
        grad.scale(inv);

        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                last_finite_loss: ckpt.last_loss.unwrap_or(f64::NAN),
                checkpoint: Box::new(ckpt),
            });
        }
        if let Some(c) = cfg.clip_norm {
            let norm = grad.norm_sq().sqrt();
            if norm > c {
                grad.scale(c / norm);
            }
        }

        let mut next = ckpt.clone();
        optimizer_step(&mut next.net, &mut next.optimizer, cfg.optimizer, &grad, eta)?;
        if !next.net.theta().iter().all(|v| v.is_finite()) || !next.net.tau().is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                last_finite_loss: loss,
                checkpoint: Box::new(ckpt),
            });
        }
        next.rng = rng;
        next.iteration = k + 1;
        next.epoch = (k + 1) / per_epoch;
        next.last_loss = Some(loss);
        ckpt = next;

        trace.rows.push(TraceRow {
            iteration: k,
            epoch,
            loss,
            eta,
            grad_norm_sq_full,
            wallclock_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if cfg.snapshot_period > 0 && ckpt.iteration.is_multiple_of(cfg.snapshot_period) {
            observer.snapshot(&ckpt)?;
        }
    }
    Ok((ckpt, trace))
}

/// End-to-end training of an unfolded network on `dataset`.
pub fn train_unfolded(
    dataset: &Dataset,
    model: &ForwardModel,
    start: Checkpoint,
    unfold_cfg: &UnfoldConfig,
    train_cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Checkpoint, TrainTrace)> {
    unfold_cfg.validate(model.num_components())?;
    let full = unfold_cfg.clone().into_full_batch(model.num_components());
    fit(
        start,
        dataset.len(),
        train_cfg,
        |net, j, rng| sample_loss_grad(dataset.get(j), model, net, unfold_cfg, rng),
        Some(|net: &PriorNet| full_objective_gradient(dataset, model, net, &full).map(|r| r.1)),
        observer,
    )
}

/// Warm-start training of `R_θ` alone on `(x̃_j, x_j)` pairs, minimizing
/// `‖R_θ(x̃) − x‖²`. `τ` is not touched.
pub fn pretrain_artifact_removal(
    dataset: &Dataset,
    start: Checkpoint,
    train_cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Checkpoint, TrainTrace)> {
    fit(
        start,
        dataset.len(),
        train_cfg,
        |net, j, _rng| {
            let s = dataset.get(j);
            pretrain_loss_grad(net, &s.init, &s.truth)
        },
        None::<fn(&PriorNet) -> Result<ParamGrad>>,
        observer,
    )
}

impl UnfoldConfig {
    /// Same configuration with full-batch data consistency.
    pub fn into_full_batch(mut self, components: usize) -> Self {
        self.mode = crate::unfold::DcMode::FullBatch;
        self.minibatch = components;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let c = Schedule::Constant { eta: 0.1 };
        assert_eq!(c.eta(7, 10), 0.1);
        let s = Schedule::InverseSqrt { lipschitz: 2.0 };
        assert_eq!(s.eta(0, 100), 0.05);
        assert_eq!(s.eta(99, 100), 0.05);
        let d = Schedule::StepDecay {
            eta: 1.0,
            factor: 0.5,
            period: 3,
        };
        assert_eq!(d.eta(2, 10), 1.0);
        assert_eq!(d.eta(3, 10), 0.5);
        assert_eq!(d.eta(6, 10), 0.25);
        assert!(Schedule::Constant { eta: 0.0 }.validate().is_err());
    }

    #[test]
    fn sgd_update_cases() {
        let spec = crate::unfold::LayerSpec { hidden: 2, kernel: 3 };
        let mut net = PriorNet::random(spec, 1.5, 3);
        let before = net.clone();
        sgd_update(&mut net, &ParamGrad::zeros(spec.param_count()), 0.3).unwrap();
        assert_eq!(net, before);

        let g = ParamGrad {
            theta: net.theta().to_vec(),
            tau: net.tau(),
        };
        sgd_update(&mut net, &g, 1.0).unwrap();
        assert!(net.theta().iter().all(|&v| v == 0.0));
        assert_eq!(net.tau(), 0.0);

        let mut bad = ParamGrad::zeros(spec.param_count());
        bad.tau = f64::NAN;
        assert!(matches!(sgd_update(&mut net, &bad, 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn trace_csv_columns() {
        let trace = TrainTrace {
            rows: vec![TraceRow {
                iteration: 0,
                epoch: 0,
                loss: 1.5,
                eta: 0.1,
                grad_norm_sq_full: None,
                wallclock_ms: 2.0,
            }],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,epoch,loss,eta,grad_norm_sq_full,wallclock_ms\n"));
        assert!(text.contains("0,0,1.5e0,1e-1,,2.000"));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok = r#"{"epochs": 2, "schedule": {"kind": "constant", "eta": 0.1}}"#;
        let cfg: TrainConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(cfg.image_batch, 1);
        assert_eq!(cfg.optimizer, Optimizer::Sgd);
        let bad = r#"{"epochs": 2, "schedule": {"kind": "constant", "eta": 0.1}, "lr": 1}"#;
        assert!(serde_json::from_str::<TrainConfig>(bad).is_err());
    }
}
