use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    discrete_gradient, discrete_gradient_adjoint, total_variation, ForwardModel, MeasurementSet,
};
use crate::tensor::Tensor;

/// Approximate `argmin_x ½‖x − z‖² + λ‖Dx‖₁` by projected gradient on the
/// dual: `x = z − Dᵀw` with `|w| ≤ λ` entrywise, step `1/8 ≤ 1/‖DᵀD‖`,
/// starting from `w = 0`.
pub fn tv_prox(z: &Tensor, lambda: f64, inner_iters: usize) -> Result<Tensor> {
    if inner_iters == 0 {
        return Err(Error::InvalidArgument("tv_prox needs >= 1 inner iteration".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative TV weight {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(z.clone());
    }
    let shape = z.shape();
    if shape.len() != 2 {
        return Err(Error::InvalidArgument(format!("tv_prox expects an image, got {shape:?}")));
    }
    let mut w = Tensor::zeros(&[2, shape[0], shape[1]]);
    let step = 1.0 / 8.0;
    for _ in 0..inner_iters {
        let x = z.sub(&discrete_gradient_adjoint(&w)?)?;
        let g = discrete_gradient(&x)?;
        for (wi, gi) in w.data_mut().iter_mut().zip(g.data()) {
            *wi = (*wi + step * gi).clamp(-lambda, lambda);
        }
    }
    z.sub(&discrete_gradient_adjoint(&w)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvConfig {
    /// Weight `τ` of `τ‖Dx‖₁` relative to `g(x) = (1/I) Σ ½‖A_i x − y_i‖²`.
    pub tau: f64,
    #[serde(default = "default_outer")]
    pub iterations: usize,
    #[serde(default = "default_inner")]
    pub inner_iterations: usize,
    /// Gradient step; `1/L` from a power-iteration estimate when absent.
    #[serde(default)]
    pub step: Option<f64>,
}

fn default_outer() -> usize {
    240
}

fn default_inner() -> usize {
    20
}

impl TvConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            iterations: default_outer(),
            inner_iterations: default_inner(),
            step: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let step_ok = self.step.is_none_or(|s| s > 0.0 && s.is_finite());
        if !(self.tau >= 0.0 && self.tau.is_finite())
            || self.iterations == 0
            || self.inner_iterations == 0
            || !step_ok
        {
            return Err(Error::InvalidArgument(format!("invalid TV config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TvResult {
    pub image: Tensor,
    /// `F(x^k) = g(x^k) + τ‖Dx^k‖₁` after every outer iteration.
    pub objective: Vec<f64>,
    pub step: f64,
}

/// Power iterations used for the default step size.
pub const POWER_ITERATIONS: usize = 50;

fn tv_objective(model: &ForwardModel, y: &MeasurementSet, x: &Tensor, tau: f64) -> Result<f64> {
    let reg = if tau == 0.0 { 0.0 } else { tau * total_variation(x)? };
    Ok(model.data_fidelity(x, y)? + reg)
}

/// Monotone FISTA on `g(x) + τ‖Dx‖₁` from `x⁰ = init` (zeros if absent).
pub fn tv_apgm(
    y: &MeasurementSet,
    model: &ForwardModel,
    cfg: &TvConfig,
    init: Option<&Tensor>,
) -> Result<TvResult> {
    cfg.validate()?;
    let step = match cfg.step {
        Some(s) => s,
        None => {
            let l = model.lipschitz_estimate(POWER_ITERATIONS)?;
            if l <= 0.0 {
                return Err(Error::InvalidArgument("forward model is zero".into()));
            }
            1.0 / l
        }
    };
    let mut x = match init {
        Some(x0) => {
            x0.ensure_shape(&model.image_shape())?;
            x0.clone()
        }
        None => Tensor::zeros(&model.image_shape()),
    };
    let mut f_x = tv_objective(model, y, &x, cfg.tau)?;
    let mut v = x.clone();
    let mut t = 1.0f64;
    let mut objective = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let grad = model.full_gradient(&v, y)?;
        let mut u = v.clone();
        u.axpy(-step, &grad)?;
        let z = tv_prox(&u, step * cfg.tau, cfg.inner_iterations)?;
        let f_z = tv_objective(model, y, &z, cfg.tau)?;
        let x_prev = x.clone();
        if f_z <= f_x {
            x = z.clone();
            f_x = f_z;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // v = x + (t/t')(z − x) + ((t − 1)/t')(x − x_prev)
        v = x.clone();
        v.axpy(t / t_next, &z.sub(&x)?)?;
        v.axpy((t - 1.0) / t_next, &x.sub(&x_prev)?)?;
        t = t_next;
        objective.push(f_x);
    }
    Ok(TvResult {
        image: x,
        objective,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_and_constant_images_are_fixed() {
        let z = Tensor::new(vec![3, 4], (0..12).map(|v| (v as f64).sin()).collect()).unwrap();
        assert_eq!(tv_prox(&z, 0.0, 5).unwrap(), z);
        let c = Tensor::full(&[4, 4], 0.7);
        assert_eq!(tv_prox(&c, 0.3, 5).unwrap(), c);
        assert!(tv_prox(&z, 0.1, 0).is_err());
    }

    #[test]
    fn zero_measurements_give_zero_image() {
        let model = crate::forward::make_matrix_model(4, 2, 10, 3).unwrap();
        let y = model.apply(&Tensor::zeros(&[4, 4])).unwrap();
        let out = tv_apgm(&y, &model, &TvConfig::new(0.5), None).unwrap();
        assert_eq!(out.image.norm(), 0.0);
    }
}
