mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{max_abs_diff, tikhonov};
use unfold_sgd::baselines::{red_fixed_point, tv_apgm, tv_prox, Denoiser, RedConfig, TvConfig};
use unfold_sgd::forward::{make_matrix_model, total_variation, ForwardModel, MeasurementSet};
use unfold_sgd::Tensor;

fn image(size: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::new(vec![size, size], (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dense_problem(components: usize, rows: usize, seed: u64) -> (ForwardModel, MeasurementSet) {
    let model = make_matrix_model(3, components, rows, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = model.apply(&image(3, &mut rng)).unwrap();
    // perturb so the data are inconsistent
    let blocks = y.blocks.iter().map(|b| b.map(|v| v + rng.random_range(-0.1..0.1))).collect();
    (model, MeasurementSet::noiseless(blocks))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tv_prox_is_nonexpansive(seed in any::<u64>(), lambda in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (image(6, &mut rng), image(6, &mut rng));
        let pa = tv_prox(&a, lambda, 3000).unwrap();
        let pb = tv_prox(&b, lambda, 3000).unwrap();
        let lhs = pa.sub(&pb).unwrap().norm();
        let rhs = a.sub(&b).unwrap().norm();
        prop_assert!(lhs <= rhs * (1.0 + 1e-3), "{lhs} > {rhs}");
    }

    /// The prox output beats every nearby candidate on the prox objective.
    #[test]
    fn tv_prox_minimizes_its_objective(seed in any::<u64>(), lambda in 0.01f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = image(5, &mut rng);
        let obj = |x: &Tensor| 0.5 * x.sub(&z).unwrap().norm_sq() + lambda * total_variation(x).unwrap();
        let p = tv_prox(&z, lambda, 5000).unwrap();
        let best = obj(&p);
        for _ in 0..20 {
            let cand = p.zip_map(&image(5, &mut rng), |a, b| a + 0.05 * b).unwrap();
            prop_assert!(best <= obj(&cand) + 1e-6);
        }
    }
}

#[test]
fn tv_without_regularization_is_least_squares() {
    let (model, y) = dense_problem(3, 10, 4);
    let mut cfg = TvConfig::new(0.0);
    cfg.iterations = 3000;
    let x = tv_apgm(&y, &model, &cfg, None).unwrap().image;
    let oracle = tikhonov(&model, &y, 0.0);
    assert!(max_abs_diff(x.data(), &oracle) <= 1e-5);
}

#[test]
fn tv_objective_is_monotone() {
    let (model, y) = dense_problem(2, 6, 8);
    let r = tv_apgm(&y, &model, &TvConfig::new(0.05), None).unwrap();
    assert!(r.objective.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn red_with_identity_denoiser_is_least_squares() {
    let (model, y) = dense_problem(3, 10, 5);
    let cfg = RedConfig {
        iterations: 20_000,
        ..RedConfig::new(0.7)
    };
    let x0 = Tensor::zeros(&[3, 3]);
    let x = red_fixed_point(&y, &model, &x0, &Denoiser::Identity, &cfg).unwrap().image;
    assert!(max_abs_diff(x.data(), &tikhonov(&model, &y, 0.0)) <= 1e-5);
}

#[test]
fn red_with_zero_denoiser_is_tikhonov() {
    for comps in [1, 4] {
        let (model, y) = dense_problem(comps, 7, 6);
        let cfg = RedConfig {
            iterations: 5000,
            ..RedConfig::new(0.3)
        };
        let x0 = Tensor::zeros(&[3, 3]);
        let r = red_fixed_point(&y, &model, &x0, &Denoiser::Zero, &cfg).unwrap();
        assert!(max_abs_diff(r.image.data(), &tikhonov(&model, &y, 0.3)) <= 1e-5);
        assert!(*r.residuals.last().unwrap() < 1e-8);
    }
}
