//! Deep unfolding of gradient-based regularization by denoising with
//! stochastic data-consistency layers.
//!
//! The batch network (U-RED) refines an initial image with `Q` steps
//! `x⁺ = x − γ(∇g(x) + τ·D_θ(x))`, where `∇g` averages the gradients of all
//! `I` measurement components. SGD-Net replaces `∇g` with the average over
//! `B` components drawn uniformly with replacement at every step.
//!
//! Modules:
//! - [`diff`]: tensors on a reverse-mode tape.
//! - [`forward`]: measurement operators, data-consistency gradients, inits.
//! - [`unfold`]: the prior network and the unfolded forward pass.
//! - [`training`]: end-to-end SGD training, warm-up, checkpoints.
//! - [`baselines`]: TV via accelerated proximal gradient, gradient RED.
//! - [`metrics`]: affine-fit SNR and SSIM.
//! - [`theory`]: empirical checks of the stochastic-gradient assumptions and
//!   convergence trends.
//! - [`experiment`]: configs, phantoms, datasets and benchmarks used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod diff;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod metrics;
pub mod tensor;
pub mod theory;
pub mod training;
pub mod unfold;

pub use error::{Error, Result};
pub use tensor::Tensor;
