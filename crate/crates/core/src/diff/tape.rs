//! Reverse-mode tape over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so inputs always precede their
//! consumers and one reverse sweep over the node list visits everything in
//! topological order. Forward activations are stored on the tape; nothing is
//! recomputed during the reverse pass.

use std::fmt;

use crate::diff::conv::{self, ConvGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

type TransposeFn<'a> = Box<dyn Fn(&Tensor) -> Tensor + 'a>;

enum Op<'a> {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    ScaleBy {
        input: NodeId,
        factor: NodeId,
    },
    Reshape(NodeId),
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
    },
    Prelu {
        input: NodeId,
        slope: NodeId,
    },
    /// `value = L(input) + c`; the reverse pass applies `Lᵀ`.
    Affine {
        input: NodeId,
        transpose: TransposeFn<'a>,
    },
    Sum(NodeId),
    SumSquares(NodeId),
    SquaredError {
        input: NodeId,
        target: Tensor,
    },
}

impl Op<'_> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleBy { .. } => "scale_by",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Prelu { .. } => "prelu",
            Op::Affine { .. } => "affine",
            Op::Sum(..) => "sum",
            Op::SumSquares(..) => "sum_squares",
            Op::SquaredError { .. } => "squared_error",
        }
    }
}

struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
}

/// Records one forward evaluation. `'a` bounds the data borrowed by
/// [`Tape::affine`] transpose closures (forward models, measurements).
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl fmt::Debug for Tape<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(
                self.nodes
                    .iter()
                    .map(|n| (n.op.name(), n.value.shape().to_vec())),
            )
            .finish()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op<'a>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// An input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor))
    }

    /// Multiplies every entry of `input` by the one-element node `factor`.
    pub fn scale_by(&mut self, input: NodeId, factor: NodeId) -> Result<NodeId> {
        let f = self.value(factor);
        if !f.is_scalar() {
            return Err(Error::shape(&[1], f.shape()));
        }
        let v = self.value(input).scale(f.item());
        Ok(self.push(v, Op::ScaleBy { input, factor }))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(input).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(input)))
    }

    /// Same-padded cross-correlation. `input` is `[h, w]` or `[cin, h, w]`,
    /// `kernels` is `[cout, cin, kh, kw]` with odd `kh, kw`, `bias` is `[cout]`.
    /// The result is `[cout, h, w]`.
    pub fn conv2d(&mut self, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let (cin, height, width) = match *x.shape() {
            [h, w] => (1, h, w),
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "conv2d input must be HxW or CxHxW, got {:?}",
                    x.shape()
                )))
            }
        };
        let k = self.value(kernels);
        let [cout, kcin, kh, kw] = *k.shape() else {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernels must be rank 4, got {:?}",
                k.shape()
            )));
        };
        if kcin != cin {
            return Err(Error::shape(&[cout, cin, kh, kw], k.shape()));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        self.value(bias).ensure_shape(&[cout])?;
        let geometry = ConvGeometry {
            cin,
            cout,
            height,
            width,
            kh,
            kw,
        };
        let out = conv::forward(&geometry, x.data(), k.data(), self.value(bias).data());
        let v = Tensor::new(vec![cout, height, width], out)?;
        Ok(self.push(
            v,
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
            },
        ))
    }

    /// `max(0, x) + a·min(0, x)` with a learnable one-element slope `a`.
    pub fn prelu(&mut self, input: NodeId, slope: NodeId) -> Result<NodeId> {
        let a = self.value(slope);
        if !a.is_scalar() {
            return Err(Error::shape(&[1], a.shape()));
        }
        let a = a.item();
        let v = self
            .value(input)
            .map(|x| if x > 0.0 { x } else { a * x });
        Ok(self.push(v, Op::Prelu { input, slope }))
    }

    /// Records an affine map `value = L(input) + c` whose forward value the
    /// caller already computed. `transpose` must apply `Lᵀ`.
    pub fn affine(
        &mut self,
        input: NodeId,
        value: Tensor,
        transpose: impl Fn(&Tensor) -> Tensor + 'a,
    ) -> NodeId {
        self.push(
            value,
            Op::Affine {
                input,
                transpose: Box::new(transpose),
            },
        )
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(input).sum());
        self.push(v, Op::Sum(input))
    }

    pub fn sum_squares(&mut self, input: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(input).norm_sq());
        self.push(v, Op::SumSquares(input))
    }

    /// `‖input − target‖²`.
    pub fn squared_error(&mut self, input: NodeId, target: &Tensor) -> Result<NodeId> {
        let d = self.value(input).sub(target)?;
        Ok(self.push(
            Tensor::scalar(d.norm_sq()),
            Op::SquaredError {
                input,
                target: target.clone(),
            },
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |u, v| u * v)?;
                    let gb = g.zip_map(self.value(*a), |u, v| u * v)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, factor) => accumulate(&mut grads, *a, g.scale(*factor)),
                Op::ScaleBy { input, factor } => {
                    let f = self.value(*factor).item();
                    let gf = g.dot(self.value(*input))?;
                    accumulate(&mut grads, *input, g.scale(f));
                    accumulate(&mut grads, *factor, Tensor::scalar(gf));
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.clone().reshape(&shape)?);
                }
                Op::Conv2d {
                    input,
                    kernels,
                    bias,
                    geometry,
                } => {
                    let x = self.value(*input);
                    let k = self.value(*kernels);
                    let (gi, gk, gb) = conv::backward(geometry, x.data(), k.data(), g.data());
                    accumulate(&mut grads, *input, Tensor::new(x.shape().to_vec(), gi)?);
                    accumulate(&mut grads, *kernels, Tensor::new(k.shape().to_vec(), gk)?);
                    accumulate(&mut grads, *bias, Tensor::vector(gb));
                }
                Op::Prelu { input, slope } => {
                    let a = self.value(*slope).item();
                    let x = self.value(*input);
                    let gx = x.zip_map(&g, |xv, gv| if xv > 0.0 { gv } else { a * gv })?;
                    let ga: f64 = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&xv, &gv)| xv.min(0.0) * gv)
                        .sum();
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *slope, Tensor::scalar(ga));
                }
                Op::Affine { input, transpose } => {
                    let gi = transpose(&g);
                    self.value(*input).ensure_same_shape(&gi)?;
                    accumulate(&mut grads, *input, gi);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, g.item()));
                }
                Op::SumSquares(a) => {
                    let s = 2.0 * g.item();
                    accumulate(&mut grads, *a, self.value(*a).scale(s));
                }
                Op::SquaredError { input, target } => {
                    let s = 2.0 * g.item();
                    let d = self.value(*input).sub(target)?;
                    accumulate(&mut grads, *input, d.scale(s));
                }
            }
            // Keep gradients only where callers can ask for them.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes[..=loss.0]
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Leaf gradients from one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// `∂loss/∂leaf`; zeros for leaves the loss does not depend on, including
    /// leaves created after the loss node.
    pub fn wrt(&self, leaf: NodeId) -> Tensor {
        match self.grads.get(leaf.0) {
            Some(Some(g)) => g.clone(),
            Some(None) => Tensor::zeros(&self.shapes[leaf.0]),
            None => panic!("node {} is not part of this tape prefix", leaf.0),
        }
    }
}
