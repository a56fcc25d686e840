use serde::{Deserialize, Serialize};

use crate::forward::convfilter::ConvFilter;
use crate::forward::radon::RadonView;

/// Dense row-major matrix acting on a flattened image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = scale;
        }
        Self::new(n, n, data)
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }
}

/// One measurement-producing block `A_i` of a forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ComponentOperator {
    RadonView(RadonView),
    ConvFilter(ConvFilter),
    ExplicitMatrix(DenseMatrix),
}

impl ComponentOperator {
    pub fn input_len(&self) -> usize {
        match self {
            ComponentOperator::RadonView(v) => v.input_len(),
            ComponentOperator::ConvFilter(c) => c.len(),
            ComponentOperator::ExplicitMatrix(m) => m.cols,
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match self {
            ComponentOperator::RadonView(v) => vec![v.output_len()],
            ComponentOperator::ConvFilter(c) => vec![c.size(), c.size()],
            ComponentOperator::ExplicitMatrix(m) => vec![m.rows],
        }
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    /// `out = A_i x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ComponentOperator::RadonView(v) => v.apply(x, out),
            ComponentOperator::ConvFilter(c) => c.apply(x, out),
            ComponentOperator::ExplicitMatrix(m) => m.apply(x, out),
        }
    }

    /// `out = A_iᵀ y`.
    pub fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        match self {
            ComponentOperator::RadonView(v) => v.adjoint(y, out),
            ComponentOperator::ConvFilter(c) => c.adjoint(y, out),
            ComponentOperator::ExplicitMatrix(m) => m.adjoint(y, out),
        }
    }
}
