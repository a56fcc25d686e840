//! Independent dense linear algebra used as test oracles.
#![allow(dead_code)]

use unfold_sgd::forward::{ComponentOperator, ForwardModel, MeasurementSet};

/// Solves `m·x = b` by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    x
}

/// Stacked rows of every explicit-matrix component.
pub fn stacked_rows(model: &ForwardModel) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for c in model.components() {
        let ComponentOperator::ExplicitMatrix(m) = c else {
            panic!("dense model expected")
        };
        for r in 0..m.rows {
            rows.push(m.data[r * m.cols..(r + 1) * m.cols].to_vec());
        }
    }
    rows
}

/// `argmin (1/I)·½‖Ax − y‖² + ½·tau·‖x‖²`, i.e. `((1/I)AᵀA + τI)⁻¹ (1/I)Aᵀy`.
pub fn tikhonov(model: &ForwardModel, y: &MeasurementSet, tau: f64) -> Vec<f64> {
    let a = stacked_rows(model);
    let yv: Vec<f64> = y.blocks.iter().flat_map(|b| b.data().to_vec()).collect();
    let n = a[0].len();
    let inv = 1.0 / model.num_components() as f64;
    let mut m = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    for (row, yr) in a.iter().zip(&yv) {
        for i in 0..n {
            rhs[i] += inv * row[i] * yr;
            for j in 0..n {
                m[i][j] += inv * row[i] * row[j];
            }
        }
    }
    for (i, r) in m.iter_mut().enumerate() {
        r[i] += tau;
    }
    solve(m, rhs)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unfold_sgd::diff::{grad_check, GradCheckReport};
use unfold_sgd::experiment::random_phantom;
use unfold_sgd::forward::{add_awgn_to_input_snr, bp_init, make_conv_model};
use unfold_sgd::training::{Dataset, Sample};
use unfold_sgd::unfold::{sgdnet_step, LayerSpec, NetLeaves, PriorNet};

/// Small conv-model training set with backprojection inits.
pub fn small_dataset(size: usize, components: usize, count: usize, seed: u64) -> (ForwardModel, Dataset) {
    let model = make_conv_model(size, components, seed).unwrap();
    let samples = (0..count)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100 + j as u64);
            let truth = random_phantom(size, &mut rng);
            let y = add_awgn_to_input_snr(&model.apply(&truth).unwrap(), 25.0, seed + j as u64).unwrap();
            let init = bp_init(&y, &model).unwrap();
            Sample { truth, y, init }
        })
        .collect();
    (model, Dataset::new(samples).unwrap())
}

/// Finite-difference check of `(1/M) Σ_j ‖T(x̃_j) − x_j‖²` through `steps`
/// unfolded steps with the given per-step index sets (`None` = full batch).
pub fn unfolded_grad_check(
    model: &ForwardModel,
    data: &Dataset,
    net: &PriorNet,
    gamma: f64,
    draws: &[Option<Vec<usize>>],
    tolerance: f64,
) -> GradCheckReport {
    let blocks = net.param_blocks();
    grad_check(
        |tape, leaves| {
            let nl = NetLeaves {
                blocks: leaves[..leaves.len() - 1].to_vec(),
                tau: *leaves.last().unwrap(),
            };
            let mut total = None;
            for s in data.samples() {
                let mut x = tape.constant(s.init.clone());
                for d in draws {
                    x = sgdnet_step(tape, x, &s.y, model, &nl, gamma, d.as_deref())?;
                }
                let l = tape.squared_error(x, &s.truth)?;
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l)?,
                });
            }
            Ok(tape.scale(total.unwrap(), 1.0 / data.len() as f64))
        },
        &blocks,
        1e-6,
        tolerance,
    )
    .unwrap()
}

pub fn tiny_net(seed: u64) -> PriorNet {
    PriorNet::random(LayerSpec { hidden: 3, kernel: 3 }, 1.5, seed)
}

/// A one-channel network whose artifact estimate is the input itself
/// (centre taps 1, PReLU slopes 1, biases 0), so `D_θ(x) = x`.
pub fn pass_through_net(tau: f64) -> PriorNet {
    let spec = LayerSpec { hidden: 1, kernel: 3 };
    let mut theta = vec![0.0; spec.param_count()];
    // blocks: w1[9] b1 a1 w2[9] b2 a2 w3[9] b3
    for i in [4, 10, 15, 21, 26] {
        theta[i] = 1.0;
    }
    PriorNet::from_parts(spec, theta, tau).unwrap()
}
