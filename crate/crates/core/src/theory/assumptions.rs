use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{sample_indices, ForwardModel, MeasurementSet};
use crate::metrics::Summary;
use crate::tensor::Tensor;
use crate::training::{full_objective_gradient, per_sample_gradients, Dataset};
use crate::unfold::{ParamGrad, PriorNet, UnfoldConfig};

pub const UNBIASEDNESS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct UnbiasednessReport {
    pub probes: usize,
    /// `max ‖mean_i ∇g_i(x) − ∇g(x)‖_∞` over probes.
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Mean of the single-component minibatch gradients over `i = 0..I`.
pub fn enumerated_mean_gradient(
    model: &ForwardModel,
    y: &MeasurementSet,
    x: &Tensor,
) -> Result<Tensor> {
    let mut acc = Tensor::zeros(x.shape());
    for i in 0..model.num_components() {
        acc.axpy(1.0, &model.minibatch_gradient(x, y, &[i])?)?;
    }
    Ok(acc.scale(1.0 / model.num_components() as f64))
}

/// Enumerates every `B = 1` draw at each probe and compares the mean to the
/// full gradient.
pub fn check_phi_unbiasedness(
    model: &ForwardModel,
    y: &MeasurementSet,
    probes: &[Tensor],
) -> Result<UnbiasednessReport> {
    let mut max_deviation: f64 = 0.0;
    for x in probes {
        let mean = enumerated_mean_gradient(model, y, x)?;
        let full = model.full_gradient(x, y)?;
        max_deviation = max_deviation.max(mean.max_abs_diff(&full)?);
    }
    Ok(UnbiasednessReport {
        probes: probes.len(),
        max_deviation,
        tolerance: UNBIASEDNESS_TOLERANCE,
        passed: max_deviation <= UNBIASEDNESS_TOLERANCE,
    })
}

/// `σ²(x) = (1/I) Σ_i ‖∇g_i(x) − ∇g(x)‖²`, the variance of a single-draw
/// minibatch gradient.
pub fn enumerated_variance(model: &ForwardModel, y: &MeasurementSet, x: &Tensor) -> Result<f64> {
    let full = model.full_gradient(x, y)?;
    let mut total = 0.0;
    for i in 0..model.num_components() {
        total += model.minibatch_gradient(x, y, &[i])?.sub(&full)?.norm_sq();
    }
    Ok(total / model.num_components() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceRow {
    pub probe: usize,
    pub minibatch: usize,
    pub sigma_sq: f64,
    /// `σ²/B`.
    pub expected: f64,
    /// Monte-Carlo mean of `‖∇̂g − ∇g‖²`.
    pub mc_mean: f64,
    pub std_error: f64,
    /// `mc_mean / expected`.
    pub ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub draws: usize,
    pub rows: Vec<VarianceRow>,
    pub passed: bool,
}

/// Monte-Carlo check of `E‖∇̂g − ∇g‖² = σ²/B` within 3 standard errors.
pub fn check_variance_scaling(
    model: &ForwardModel,
    y: &MeasurementSet,
    probes: &[Tensor],
    minibatch_sizes: &[usize],
    draws: usize,
    seed: u64,
) -> Result<VarianceReport> {
    if draws < 2 {
        return Err(Error::InvalidArgument("variance check needs >= 2 draws".into()));
    }
    let count = model.num_components();
    let mut rows = Vec::new();
    for (p, x) in probes.iter().enumerate() {
        let full = model.full_gradient(x, y)?;
        let sigma_sq = enumerated_variance(model, y, x)?;
        for &b in minibatch_sizes {
            if b == 0 {
                return Err(Error::InvalidArgument("minibatch size must be >= 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(crate::experiment::derive_seed(
                seed,
                &[p as u64, b as u64],
            ));
            let errors = (0..draws)
                .map(|_| {
                    let idx = sample_indices(b, count, &mut rng);
                    Ok(model.minibatch_gradient(x, y, &idx)?.sub(&full)?.norm_sq())
                })
                .collect::<Result<Vec<f64>>>()?;
            let s = Summary::of(&errors).expect("draws >= 2");
            // sample standard deviation of the mean
            let n = draws as f64;
            let std_error = s.std * (n / (n - 1.0)).sqrt() / n.sqrt();
            let expected = sigma_sq / b as f64;
            rows.push(VarianceRow {
                probe: p,
                minibatch: b,
                sigma_sq,
                expected,
                mc_mean: s.mean,
                std_error,
                ratio: s.mean / expected,
                passed: (s.mean - expected).abs() <= 3.0 * std_error,
            });
        }
    }
    let passed = rows.iter().all(|r| r.passed);
    Ok(VarianceReport {
        draws,
        rows,
        passed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Assumption3Report {
    pub samples: usize,
    /// `max |mean_j ∇F_j − ∇F|` over all parameters.
    pub max_deviation: f64,
    /// `(1/M) Σ_j ‖∇F_j − ∇F‖²`.
    pub eps_sq: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Enumerates the per-sample training gradients (full-batch data
/// consistency) and compares their mean with the batch gradient.
pub fn check_training_gradient_unbiasedness(
    dataset: &Dataset,
    model: &ForwardModel,
    net: &PriorNet,
    cfg: &UnfoldConfig,
) -> Result<Assumption3Report> {
    let per_sample = per_sample_gradients(dataset, model, net, cfg)?;
    let (_, full) = full_objective_gradient(dataset, model, net, cfg)?;
    let mut mean = ParamGrad::zeros(full.theta.len());
    for (_, g) in &per_sample {
        mean.axpy(1.0, g);
    }
    mean.scale(1.0 / per_sample.len() as f64);
    let max_deviation = mean
        .to_vec()
        .iter()
        .zip(full.to_vec())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let eps_sq = per_sample
        .iter()
        .map(|(_, g)| {
            let mut d = g.clone();
            d.axpy(-1.0, &full);
            d.norm_sq()
        })
        .sum::<f64>()
        / per_sample.len() as f64;
    Ok(Assumption3Report {
        samples: per_sample.len(),
        max_deviation,
        eps_sq,
        tolerance: UNBIASEDNESS_TOLERANCE,
        passed: max_deviation <= UNBIASEDNESS_TOLERANCE,
    })
}
