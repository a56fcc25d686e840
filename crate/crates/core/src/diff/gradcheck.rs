//! Central finite-difference check of tape gradients.

use serde::Serialize;

use crate::diff::tape::{NodeId, Tape};
use crate::error::Result;
use crate::tensor::Tensor;

/// A named group of parameters, e.g. one layer's kernels.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub value: Tensor,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockDiscrepancy {
    pub name: String,
    /// `max|reverse − fd| / max(max|reverse|, max|fd|)`, zero when both vanish.
    pub relative_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockDiscrepancy>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with the given `step`, one parameter entry at a time.
///
/// `f` receives a fresh tape and one leaf per block (in order) and returns
/// the loss node.
pub fn grad_check<'a, F>(
    f: F,
    params: &[ParamBlock],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'a>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<_> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = f(&mut tape, &leaves)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let leaves: Vec<_> = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
    let loss = f(&mut tape, &leaves)?;
    let grads = tape.backward(loss)?;

    let mut values: Vec<Tensor> = params.iter().map(|p| p.value.clone()).collect();
    let mut blocks = Vec::with_capacity(params.len());
    for (b, block) in params.iter().enumerate() {
        let reverse = grads.wrt(leaves[b]);
        let mut max_abs_error: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..block.value.len() {
            let orig = block.value.data()[i];
            values[b].data_mut()[i] = orig + step;
            let up = eval(&values)?;
            values[b].data_mut()[i] = orig - step;
            let down = eval(&values)?;
            values[b].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            let r = reverse.data()[i];
            max_abs_error = max_abs_error.max((r - fd).abs());
            scale = scale.max(r.abs()).max(fd.abs());
        }
        let relative_error = if scale > 0.0 {
            max_abs_error / scale
        } else {
            0.0
        };
        blocks.push(BlockDiscrepancy {
            name: block.name.clone(),
            relative_error,
            max_abs_error,
        });
    }
    let max_relative_error = blocks
        .iter()
        .map(|b| b.relative_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_relative_error,
        tolerance,
        passed: max_relative_error <= tolerance,
    })
}
