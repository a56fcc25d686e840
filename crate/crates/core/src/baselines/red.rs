use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ForwardModel, MeasurementSet};
use crate::tensor::Tensor;
use crate::unfold::{denoise, PriorNet};

/// Denoiser `H` of the RED fixed-point equation `∇g(x) + τ(x − H(x)) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Denoiser {
    /// `H(x) = x`; RED reduces to gradient descent on `g`.
    Identity,
    /// `H(x) = 0`; RED reduces to Tikhonov-regularized least squares.
    Zero,
    /// `H(x) = R_θ(x) = x − D_θ(x)` with a network trained for AWGN removal.
    Network(PriorNet),
}

impl Denoiser {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Denoiser::Identity => Ok(x.clone()),
            Denoiser::Zero => Ok(Tensor::zeros(x.shape())),
            Denoiser::Network(net) => denoise(net, x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RedConfig {
    pub tau: f64,
    /// Step size; `1/(L + 2τ)` from a power-iteration estimate when absent.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_iterations() -> usize {
    240
}

impl RedConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            gamma: None,
            iterations: default_iterations(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gamma_ok = self.gamma.is_none_or(|g| g >= 0.0 && g.is_finite());
        if !(self.tau >= 0.0 && self.tau.is_finite()) || !gamma_ok {
            return Err(Error::InvalidArgument(format!("invalid RED config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RedResult {
    pub image: Tensor,
    /// `‖G(x^k)‖` for `k = 0..=iterations`.
    pub residuals: Vec<f64>,
    pub gamma: f64,
}

/// `G(x) = ∇g(x) + τ(x − H(x))`.
pub fn red_operator(
    x: &Tensor,
    y: &MeasurementSet,
    model: &ForwardModel,
    tau: f64,
    denoiser: &Denoiser,
) -> Result<Tensor> {
    let mut g = model.full_gradient(x, y)?;
    if tau != 0.0 {
        g.axpy(tau, &x.sub(&denoiser.apply(x)?)?)?;
    }
    Ok(g)
}

/// Gradient-RED iteration `x⁺ = x − γ G(x)` from `x0`.
pub fn red_fixed_point(
    y: &MeasurementSet,
    model: &ForwardModel,
    x0: &Tensor,
    denoiser: &Denoiser,
    cfg: &RedConfig,
) -> Result<RedResult> {
    cfg.validate()?;
    x0.ensure_shape(&model.image_shape())?;
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => 1.0 / (model.lipschitz_estimate(super::POWER_ITERATIONS)? + 2.0 * cfg.tau),
    };
    let mut x = x0.clone();
    let mut g = red_operator(&x, y, model, cfg.tau, denoiser)?;
    let mut residuals = vec![g.norm()];
    for _ in 0..cfg.iterations {
        if gamma != 0.0 {
            x.axpy(-gamma, &g)?;
        }
        g = red_operator(&x, y, model, cfg.tau, denoiser)?;
        residuals.push(g.norm());
    }
    Ok(RedResult {
        image: x,
        residuals,
        gamma,
    })
}
