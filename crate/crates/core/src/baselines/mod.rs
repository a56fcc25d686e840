//! Reference reconstructions: anisotropic-TV regularized least squares by
//! accelerated proximal gradient, and gradient-RED with a learned denoiser.

mod red;
mod tv;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::{fit, pretrain_loss_grad, Checkpoint, TrainConfig, TrainObserver, TrainTrace};
use crate::unfold::{ParamGrad, PriorNet};

pub use red::{red_fixed_point, red_operator, Denoiser, RedConfig, RedResult};
pub use tv::{tv_apgm, tv_prox, TvConfig, TvResult, POWER_ITERATIONS};

/// Trains `R_θ` to remove AWGN of standard deviation `sigma`: each iteration
/// draws a clean image and a fresh noise realization and minimizes
/// `‖R_θ(x + e) − x‖²`.
pub fn train_denoiser(
    clean: &[Tensor],
    sigma: f64,
    start: Checkpoint,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(Checkpoint, TrainTrace)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be positive, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    fit(
        start,
        clean.len(),
        cfg,
        |net, j, rng| {
            let x = &clean[j];
            let noisy = x.map(|v| v + normal.sample(rng));
            pretrain_loss_grad(net, &noisy, x)
        },
        None::<fn(&PriorNet) -> Result<ParamGrad>>,
        observer,
    )
}
