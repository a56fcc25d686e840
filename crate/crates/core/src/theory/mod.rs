//! Empirical checks of the stochastic-gradient assumptions and of the
//! `K`- and `B`-dependence of the stationarity bound for training.

mod assumptions;
mod theorem1;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiment::{derive_seed, random_phantom};
use crate::tensor::Tensor;

pub use assumptions::{
    check_phi_unbiasedness, check_training_gradient_unbiasedness, check_variance_scaling,
    enumerated_mean_gradient, enumerated_variance, Assumption3Report, UnbiasednessReport,
    VarianceReport, VarianceRow, UNBIASEDNESS_TOLERANCE,
};
pub use theorem1::{
    min_so_far, run_seed, tail_floor, theorem1_run, theorem1_sweep, BTrendRow, KTrendRow,
    SweepSummary, Theorem1Problem, Theorem1Setup, Theorem1Trace, FLOOR_TOLERANCE,
};

/// Settings of all theory checks; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub problem: Theorem1Problem,
    pub probes: usize,
    pub variance_minibatch_sizes: Vec<usize>,
    pub draws: usize,
    pub sweep_minibatch_sizes: Vec<usize>,
    pub sweep_iterations: Vec<usize>,
    pub seeds: usize,
    pub root_seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            problem: Theorem1Problem::default(),
            probes: 5,
            variance_minibatch_sizes: vec![1, 2, 5, 10],
            draws: 10_000,
            sweep_minibatch_sizes: vec![1, 5, 20],
            sweep_iterations: vec![250, 4000],
            seeds: 5,
            root_seed: 0,
        }
    }
}

/// Random phantom probe points for the gradient checks.
pub fn probe_images(size: usize, count: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|p| {
            random_phantom(
                size,
                &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, p as u64])),
            )
        })
        .collect()
}

/// Model, measurements and probes shared by the gradient checks.
pub fn gradient_fixture(
    problem: &Theorem1Problem,
    probes: usize,
) -> Result<(crate::forward::ForwardModel, crate::forward::MeasurementSet, Vec<Tensor>)> {
    let setup = problem.setup()?;
    let y = setup.dataset.get(0).y.clone();
    Ok((setup.model, y, probe_images(problem.size, probes, problem.seed)))
}
