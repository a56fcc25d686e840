//! The artifact-removal network `R_θ` and the artifact estimator
//! `D_θ(x) = x − R_θ(x)`.
//!
//! `D_θ` is a three-layer same-padded CNN: conv 1→h, PReLU, conv h→h, PReLU,
//! conv h→1, and `R_θ(x) = x − D_θ(x)` is the residual network built on it.
//! With all-zero parameters `D_θ = 0` and `R_θ` is the identity. One set of
//! weights (and one scalar `τ`) is shared by every unfolded step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diff::{Gradients, NodeId, ParamBlock, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    /// Channels of the two hidden layers.
    pub hidden: usize,
    /// Odd square kernel extent.
    pub kernel: usize,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            hidden: 16,
            kernel: 3,
        }
    }
}

pub const BLOCK_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "prelu1.slope",
    "conv2.weight",
    "conv2.bias",
    "prelu2.slope",
    "conv3.weight",
    "conv3.bias",
];

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "layer spec needs hidden >= 1 and an odd kernel, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Shapes of the parameter blocks, in [`BLOCK_NAMES`] order.
    pub fn block_shapes(&self) -> [Vec<usize>; 8] {
        let (h, k) = (self.hidden, self.kernel);
        [
            vec![h, 1, k, k],
            vec![h],
            vec![1],
            vec![h, h, k, k],
            vec![h],
            vec![1],
            vec![1, h, k, k],
            vec![1],
        ]
    }

    pub fn param_count(&self) -> usize {
        self.block_shapes()
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    /// Stable identifier of the architecture stored in checkpoints.
    pub fn hash(&self) -> String {
        let desc = format!(
            "conv{k}x{k}(1->{h})+prelu;conv{k}x{k}({h}->{h})+prelu;conv{k}x{k}({h}->1);same-pad",
            k = self.kernel,
            h = self.hidden
        );
        hex::encode(Sha256::digest(desc.as_bytes()))
    }
}

/// Parameters `θ` (flat, in [`BLOCK_NAMES`] order) and the scalar `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorNet {
    spec: LayerSpec,
    theta: Vec<f64>,
    tau: f64,
}

/// Gradient with respect to `(θ, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub theta: Vec<f64>,
    pub tau: f64,
}

impl ParamGrad {
    pub fn zeros(len: usize) -> Self {
        Self {
            theta: vec![0.0; len],
            tau: 0.0,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.theta.iter().map(|v| v * v).sum::<f64>() + self.tau * self.tau
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.theta.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamGrad) {
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            *a += alpha * b;
        }
        self.tau += alpha * other.tau;
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.theta.iter_mut() {
            *a *= factor;
        }
        self.tau *= factor;
    }

    /// Flattened `[θ…, τ]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.theta.clone();
        v.push(self.tau);
        v
    }
}

/// Tape leaves for one registration of a [`PriorNet`].
#[derive(Debug, Clone)]
pub struct NetLeaves {
    pub blocks: Vec<NodeId>,
    pub tau: NodeId,
}

impl NetLeaves {
    pub fn gradient(&self, grads: &Gradients) -> ParamGrad {
        let mut theta = Vec::new();
        for &b in &self.blocks {
            theta.extend_from_slice(grads.wrt(b).data());
        }
        ParamGrad {
            theta,
            tau: grads.wrt(self.tau).item(),
        }
    }
}

impl PriorNet {
    pub fn zeros(spec: LayerSpec, tau: f64) -> Self {
        Self {
            spec,
            theta: vec![0.0; spec.param_count()],
            tau,
        }
    }

    /// He-normal kernels, zero biases, PReLU slopes 0.25. The output layer is
    /// scaled down so that `R_θ ≈ 0` and `D_θ ≈ I` at initialization.
    pub fn random(spec: LayerSpec, tau: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(spec.param_count());
        for (name, shape) in BLOCK_NAMES.iter().zip(spec.block_shapes()) {
            let len: usize = shape.iter().product();
            if name.ends_with("weight") {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let mut std = (2.0 / fan_in).sqrt();
                if name.starts_with("conv3") {
                    std *= 0.1;
                }
                let normal = Normal::new(0.0, std).expect("finite std");
                theta.extend((0..len).map(|_| normal.sample(&mut rng)));
            } else if name.ends_with("slope") {
                theta.push(0.25);
            } else {
                theta.extend(std::iter::repeat_n(0.0, len));
            }
        }
        Self { spec, theta, tau }
    }

    pub fn from_parts(spec: LayerSpec, theta: Vec<f64>, tau: f64) -> Result<Self> {
        spec.validate()?;
        if theta.len() != spec.param_count() {
            return Err(Error::InvalidArgument(format!(
                "layer spec needs {} parameters, got {}",
                spec.param_count(),
                theta.len()
            )));
        }
        Ok(Self { spec, theta, tau })
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn set_tau(&mut self, tau: f64) {
        self.tau = tau;
    }

    /// Parameter blocks followed by `τ`, for gradient checks.
    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut blocks = Vec::with_capacity(9);
        let mut offset = 0;
        for (name, shape) in BLOCK_NAMES.iter().zip(self.spec.block_shapes()) {
            let len: usize = shape.iter().product();
            let value = Tensor::new(shape, self.theta[offset..offset + len].to_vec())
                .expect("block shape matches layer spec");
            blocks.push(ParamBlock::new(*name, value));
            offset += len;
        }
        blocks.push(ParamBlock::new("tau", Tensor::scalar(self.tau)));
        blocks
    }

    /// Inverse of [`Self::param_blocks`].
    pub fn from_param_blocks(spec: LayerSpec, blocks: &[Tensor]) -> Result<Self> {
        if blocks.len() != BLOCK_NAMES.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} blocks, got {}",
                BLOCK_NAMES.len() + 1,
                blocks.len()
            )));
        }
        let theta = blocks[..BLOCK_NAMES.len()]
            .iter()
            .flat_map(|b| b.data().iter().copied())
            .collect();
        Self::from_parts(spec, theta, blocks[BLOCK_NAMES.len()].item())
    }

    /// Puts `θ` and `τ` on the tape as leaves.
    pub fn register(&self, tape: &mut Tape<'_>) -> NetLeaves {
        let mut blocks = Vec::with_capacity(BLOCK_NAMES.len());
        let mut offset = 0;
        for shape in self.spec.block_shapes() {
            let len: usize = shape.iter().product();
            let value = Tensor::new(shape, self.theta[offset..offset + len].to_vec())
                .expect("block shape matches layer spec");
            blocks.push(tape.leaf(value));
            offset += len;
        }
        let tau = tape.leaf(Tensor::scalar(self.tau));
        NetLeaves { blocks, tau }
    }

    pub fn apply_update(&mut self, delta: &ParamGrad, scale: f64) {
        for (t, d) in self.theta.iter_mut().zip(&delta.theta) {
            *t += scale * d;
        }
        self.tau += scale * delta.tau;
    }
}

/// `D_θ(x)`, the estimated artifacts of an `[h, w]` image node.
pub fn d_theta(tape: &mut Tape<'_>, leaves: &NetLeaves, x: NodeId) -> Result<NodeId> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "the prior network expects an [h, w] image, got {shape:?}"
        )));
    }
    let b = &leaves.blocks;
    let h1 = tape.conv2d(x, b[0], b[1])?;
    let a1 = tape.prelu(h1, b[2])?;
    let h2 = tape.conv2d(a1, b[3], b[4])?;
    let a2 = tape.prelu(h2, b[5])?;
    let h3 = tape.conv2d(a2, b[6], b[7])?;
    tape.reshape(h3, &shape)
}

/// `R_θ(x) = x − D_θ(x)`, the artifact-removed image.
pub fn r_theta_apply(tape: &mut Tape<'_>, leaves: &NetLeaves, x: NodeId) -> Result<NodeId> {
    let d = d_theta(tape, leaves, x)?;
    tape.sub(x, d)
}

/// Evaluates `R_θ` on a plain tensor.
pub fn denoise(net: &PriorNet, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let leaves = net.register(&mut tape);
    let xi = tape.constant(x.clone());
    let r = r_theta_apply(&mut tape, &leaves, xi)?;
    Ok(tape.value(r).clone())
}

/// Evaluates `D_θ` on a plain tensor.
pub fn residual(net: &PriorNet, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let leaves = net.register(&mut tape);
    let xi = tape.constant(x.clone());
    let d = d_theta(&mut tape, &leaves, xi)?;
    Ok(tape.value(d).clone())
}
