//! Unfolded RED networks: SGD-Net (minibatch data consistency) and U-RED
//! (full-batch data consistency).
//!
//! Every step computes `x⁺ = x − γ(∇̂g(x) + τ·D_θ(x))` on one tape so that
//! the output can be differentiated with respect to `θ` and `τ`.

mod net;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::forward::{sample_indices, ForwardModel, MeasurementSet};
use crate::tensor::Tensor;

pub use net::{
    d_theta, denoise, r_theta_apply, residual, LayerSpec, NetLeaves, ParamGrad, PriorNet,
    BLOCK_NAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DcMode {
    Stochastic,
    FullBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnfoldConfig {
    pub steps: usize,
    pub gamma: f64,
    pub minibatch: usize,
    pub mode: DcMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_iterates: bool,
}

impl UnfoldConfig {
    pub fn full_batch(steps: usize, gamma: f64, components: usize) -> Self {
        Self {
            steps,
            gamma,
            minibatch: components,
            mode: DcMode::FullBatch,
            seed: 0,
            record_iterates: false,
        }
    }

    pub fn stochastic(steps: usize, gamma: f64, minibatch: usize, seed: u64) -> Self {
        Self {
            steps,
            gamma,
            minibatch,
            mode: DcMode::Stochastic,
            seed,
            record_iterates: false,
        }
    }

    pub fn validate(&self, components: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("unfold steps must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.gamma
            )));
        }
        if self.mode == DcMode::Stochastic && !(1..=components).contains(&self.minibatch) {
            return Err(Error::InvalidArgument(format!(
                "minibatch {} outside 1..={components}",
                self.minibatch
            )));
        }
        Ok(())
    }
}

pub struct UnfoldOutput<'a> {
    pub tape: Tape<'a>,
    pub output: NodeId,
    pub leaves: NetLeaves,
    /// `x⁰..x^Q` when requested.
    pub iterates: Option<Vec<Tensor>>,
    /// Component indices used at each step; empty for full-batch steps.
    pub draws: Vec<Vec<usize>>,
}

impl UnfoldOutput<'_> {
    pub fn image(&self) -> &Tensor {
        self.tape.value(self.output)
    }
}

/// One unfolded step. `indices = None` uses the full gradient.
#[allow(clippy::too_many_arguments)]
pub fn sgdnet_step<'a>(
    tape: &mut Tape<'a>,
    x: NodeId,
    y: &MeasurementSet,
    model: &'a ForwardModel,
    leaves: &NetLeaves,
    gamma: f64,
    indices: Option<&[usize]>,
) -> Result<NodeId> {
    let xv = tape.value(x);
    let (grad, idx): (Tensor, Vec<usize>) = match indices {
        Some(idx) => (model.minibatch_gradient(xv, y, idx)?, idx.to_vec()),
        None => (
            model.full_gradient(xv, y)?,
            (0..model.num_components()).collect(),
        ),
    };
    let dc = tape.affine(x, grad, move |g| {
        model
            .normal_apply(g, &idx)
            .expect("indices were validated by the forward pass")
    });
    let d = d_theta(tape, leaves, x)?;
    let td = tape.scale_by(d, leaves.tau)?;
    let dir = tape.add(dc, td)?;
    let step = tape.scale(dir, gamma);
    tape.sub(x, step)
}

fn unfold<'a>(
    x0: &Tensor,
    y: &MeasurementSet,
    model: &'a ForwardModel,
    net: &PriorNet,
    config: &UnfoldConfig,
    rng: Option<&mut dyn FnMut() -> Vec<usize>>,
) -> Result<UnfoldOutput<'a>> {
    x0.ensure_shape(&model.image_shape())?;
    let mut tape = Tape::new();
    let leaves = net.register(&mut tape);
    let mut x = tape.constant(x0.clone());
    let mut iterates = config.record_iterates.then(|| vec![x0.clone()]);
    let mut draws = Vec::with_capacity(config.steps);
    let mut rng = rng;
    for _ in 0..config.steps {
        let idx = rng.as_mut().map(|draw| draw());
        x = sgdnet_step(&mut tape, x, y, model, &leaves, config.gamma, idx.as_deref())?;
        draws.push(idx.unwrap_or_default());
        if let Some(it) = iterates.as_mut() {
            it.push(tape.value(x).clone());
        }
    }
    Ok(UnfoldOutput {
        tape,
        output: x,
        leaves,
        iterates,
        draws,
    })
}

/// SGD-Net forward pass. In stochastic mode each step draws `B` fresh
/// indices from `rng`; in full-batch mode `rng` is untouched and the result
/// equals [`ured_forward`].
pub fn sgdnet_forward<'a>(
    x0: &Tensor,
    y: &MeasurementSet,
    model: &'a ForwardModel,
    net: &PriorNet,
    config: &UnfoldConfig,
    rng: &mut impl Rng,
) -> Result<UnfoldOutput<'a>> {
    match config.mode {
        DcMode::FullBatch => unfold(x0, y, model, net, config, None),
        DcMode::Stochastic => {
            let count = model.num_components();
            if !(1..=count).contains(&config.minibatch) {
                return Err(Error::InvalidArgument(format!(
                    "minibatch {} outside 1..={count}",
                    config.minibatch
                )));
            }
            let mut draw = || sample_indices(config.minibatch, count, rng);
            unfold(x0, y, model, net, config, Some(&mut draw))
        }
    }
}

/// U-RED forward pass: full gradient in every step.
pub fn ured_forward<'a>(
    x0: &Tensor,
    y: &MeasurementSet,
    model: &'a ForwardModel,
    net: &PriorNet,
    config: &UnfoldConfig,
) -> Result<UnfoldOutput<'a>> {
    unfold(x0, y, model, net, config, None)
}

/// Forward pass seeded from `config.seed`, returning only the image.
pub fn reconstruct(
    x0: &Tensor,
    y: &MeasurementSet,
    model: &ForwardModel,
    net: &PriorNet,
    config: &UnfoldConfig,
) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let out = sgdnet_forward(x0, y, model, net, config, &mut rng)?;
    Ok(out.image().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{make_matrix_model, ComponentOperator, DenseMatrix};

    fn identity_model(n: usize) -> ForwardModel {
        ForwardModel::new(
            [1, n],
            vec![ComponentOperator::ExplicitMatrix(DenseMatrix::identity(n))],
        )
        .unwrap()
    }

    #[test]
    fn pure_gradient_step() {
        let model = identity_model(3);
        let net = PriorNet::zeros(LayerSpec::default(), 0.0);
        let x = Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let y = MeasurementSet::noiseless(vec![Tensor::vector(vec![0.0, 1.0, 1.0])]);
        let mut tape = Tape::new();
        let leaves = net.register(&mut tape);
        let xi = tape.constant(x.clone());
        let out = sgdnet_step(&mut tape, xi, &y, &model, &leaves, 0.1, Some(&[0])).unwrap();
        let expected = [1.0 - 0.1 * 1.0, -2.0 - 0.1 * -3.0, 0.5 - 0.1 * -0.5];
        for (a, b) in tape.value(out).data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_step_size_freezes() {
        let model = make_matrix_model(4, 3, 5, 1).unwrap();
        let net = PriorNet::random(LayerSpec { hidden: 3, kernel: 3 }, 2.0, 3);
        let x0 = Tensor::full(&[4, 4], 0.3);
        let y = model.apply(&Tensor::full(&[4, 4], 1.0)).unwrap();
        let mut cfg = UnfoldConfig::full_batch(3, 0.0, 3);
        cfg.record_iterates = true;
        let out = ured_forward(&x0, &y, &model, &net, &cfg).unwrap();
        assert_eq!(out.image(), &x0);
        assert_eq!(out.iterates.unwrap().len(), 4);
    }

    #[test]
    fn zero_steps_returns_input() {
        let model = make_matrix_model(4, 2, 5, 1).unwrap();
        let net = PriorNet::zeros(LayerSpec::default(), 2.0);
        let x0 = Tensor::full(&[4, 4], 0.3);
        let y = model.apply(&x0).unwrap();
        let out = ured_forward(&x0, &y, &model, &net, &UnfoldConfig::full_batch(0, 0.1, 2))
            .unwrap();
        assert_eq!(out.image(), &x0);
        assert!(UnfoldConfig::full_batch(0, 0.1, 2).validate(2).is_err());
    }

    #[test]
    fn stochastic_draws_are_logged_and_seeded() {
        let model = make_matrix_model(4, 6, 5, 1).unwrap();
        let net = PriorNet::random(LayerSpec { hidden: 3, kernel: 3 }, 1.0, 3);
        let x0 = Tensor::full(&[4, 4], 0.1);
        let y = model.apply(&Tensor::full(&[4, 4], 1.0)).unwrap();
        let cfg = UnfoldConfig::stochastic(4, 0.05, 2, 9);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let out = sgdnet_forward(&x0, &y, &model, &net, &cfg, &mut rng).unwrap();
            (out.image().clone(), out.draws)
        };
        let (a, da) = run();
        let (b, db) = run();
        assert_eq!(a, b);
        assert_eq!(da, db);
        assert_eq!(da.len(), 4);
        assert!(da.iter().all(|d| d.len() == 2 && d.iter().all(|&i| i < 6)));
    }

    #[test]
    fn rejects_bad_minibatch() {
        let model = make_matrix_model(4, 3, 5, 1).unwrap();
        let net = PriorNet::zeros(LayerSpec::default(), 1.0);
        let x0 = Tensor::zeros(&[4, 4]);
        let y = model.apply(&x0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = UnfoldConfig::stochastic(2, 0.1, 4, 0);
        assert!(sgdnet_forward(&x0, &y, &model, &net, &cfg, &mut rng).is_err());
        assert!(cfg.validate(3).is_err());
    }
}
