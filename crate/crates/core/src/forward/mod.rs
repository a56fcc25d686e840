//! Component-wise linear measurement operators and data-consistency
//! gradients.
//!
//! A [`ForwardModel`] stacks `I` components `A_i`, each producing one
//! measurement block `y_i`. Every component's adjoint is the exact transpose
//! of its forward discretization. Component indices are zero-based.

mod convfilter;
mod finite_diff;
mod init;
mod model;
mod operator;
mod radon;

pub use convfilter::ConvFilter;
pub use finite_diff::{discrete_gradient, discrete_gradient_adjoint, total_variation};
pub use init::{bp_init, fbp_init};
pub use model::{
    add_awgn_to_input_snr, make_conv_model, make_matrix_model, make_radon_model,
    make_radon_model_with, sample_indices, ForwardModel, MeasurementSet, ModelConfig, ModelKind,
    NoiseInfo,
};
pub use operator::{ComponentOperator, DenseMatrix};
pub use radon::{RadonGeometry, RadonView};
