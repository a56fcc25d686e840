use rand::Rng;

use crate::diff::Tape;
use crate::error::Result;
use crate::forward::ForwardModel;
use crate::tensor::Tensor;
use crate::training::{Dataset, Sample};
use crate::unfold::{r_theta_apply, sgdnet_forward, sgdnet_step, ured_forward, ParamGrad, PriorNet, UnfoldConfig};

/// `‖pred − target‖²` (sum of squares, not normalized).
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    Ok(pred.sub(target)?.norm_sq())
}

/// `∂/∂pred ‖pred − target‖² = 2(pred − target)`.
pub fn mse_loss_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(pred.sub(target)?.scale(2.0))
}

/// Loss and `(θ, τ)`-gradient of one sample through the unfolded network,
/// drawing per-step component indices from `rng`.
pub fn sample_loss_grad(
    sample: &Sample,
    model: &ForwardModel,
    net: &PriorNet,
    cfg: &UnfoldConfig,
    rng: &mut impl Rng,
) -> Result<(f64, ParamGrad)> {
    let mut out = sgdnet_forward(&sample.init, &sample.y, model, net, cfg, rng)?;
    let loss = out.tape.squared_error(out.output, &sample.truth)?;
    let grads = out.tape.backward(loss)?;
    Ok((out.tape.value(loss).item(), out.leaves.gradient(&grads)))
}

/// `(F_j, ∇F_j)` for every sample with full-batch data consistency.
pub fn per_sample_gradients(
    dataset: &Dataset,
    model: &ForwardModel,
    net: &PriorNet,
    cfg: &UnfoldConfig,
) -> Result<Vec<(f64, ParamGrad)>> {
    dataset
        .samples()
        .iter()
        .map(|s| {
            let mut out = ured_forward(&s.init, &s.y, model, net, cfg)?;
            let loss = out.tape.squared_error(out.output, &s.truth)?;
            let grads = out.tape.backward(loss)?;
            Ok((out.tape.value(loss).item(), out.leaves.gradient(&grads)))
        })
        .collect()
}

/// Batch objective `F = (1/M) Σ_j F_j` and its gradient, using the full
/// gradient in every unfolded step regardless of `cfg.mode`. All samples
/// share one tape and one reverse sweep.
pub fn full_objective_gradient(
    dataset: &Dataset,
    model: &ForwardModel,
    net: &PriorNet,
    cfg: &UnfoldConfig,
) -> Result<(f64, ParamGrad)> {
    let mut tape = Tape::new();
    let leaves = net.register(&mut tape);
    let mut total = None;
    for s in dataset.samples() {
        s.init.ensure_shape(&model.image_shape())?;
        let mut x = tape.constant(s.init.clone());
        for _ in 0..cfg.steps {
            x = sgdnet_step(&mut tape, x, &s.y, model, &leaves, cfg.gamma, None)?;
        }
        let loss = tape.squared_error(x, &s.truth)?;
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    let total = total.expect("datasets are non-empty");
    let objective = tape.scale(total, 1.0 / dataset.len() as f64);
    let grads = tape.backward(objective)?;
    Ok((tape.value(objective).item(), leaves.gradient(&grads)))
}

/// Loss `‖R_θ(x̃) − x‖²` and its gradient.
pub fn pretrain_loss_grad(net: &PriorNet, init: &Tensor, truth: &Tensor) -> Result<(f64, ParamGrad)> {
    let mut tape = Tape::new();
    let leaves = net.register(&mut tape);
    let x = tape.constant(init.clone());
    let r = r_theta_apply(&mut tape, &leaves, x)?;
    let loss = tape.squared_error(r, truth)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), leaves.gradient(&grads)))
}
