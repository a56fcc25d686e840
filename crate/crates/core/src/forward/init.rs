//! Image-domain initializations from measurements.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::forward::model::{ForwardModel, MeasurementSet, ModelKind};
use crate::forward::operator::ComponentOperator;
use crate::tensor::Tensor;

/// Backprojection `x̃ = Aᴴ y`.
pub fn bp_init(y: &MeasurementSet, model: &ForwardModel) -> Result<Tensor> {
    model.adjoint(y)
}

/// Hann-windowed ramp filter response for a zero-padded length `len`
/// (unit detector pitch), in FFT index order.
fn hann_ramp(len: usize) -> Vec<f64> {
    // Spatial Ram-Lak kernel, then its DFT; this avoids the DC bias of a
    // sampled |ω|.
    let half = len / 2;
    let mut kernel = vec![Complex64::new(0.0, 0.0); len];
    for (k, v) in kernel.iter_mut().enumerate() {
        let n = if k <= half { k as i64 } else { k as i64 - len as i64 };
        v.re = if n == 0 {
            0.25
        } else if n % 2 != 0 {
            -1.0 / (std::f64::consts::PI * std::f64::consts::PI * (n * n) as f64)
        } else {
            0.0
        };
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let f = if k <= half { k as f64 } else { k as f64 - len as f64 } / len as f64;
            let window = 0.5 * (1.0 + (2.0 * std::f64::consts::PI * f).cos());
            h.re * window
        })
        .collect()
}

/// Filtered backprojection `x⁰ = Aᴴ F y` for parallel-beam models: every
/// view is ramp filtered with a Hann window, backprojected, and scaled by
/// `π / (I · pixel²)` so that the result approximates the image values.
pub fn fbp_init(y: &MeasurementSet, model: &ForwardModel) -> Result<Tensor> {
    if model.kind() != ModelKind::Radon {
        return Err(Error::InvalidArgument(
            "filtered backprojection needs a parallel-beam radon model".into(),
        ));
    }
    let ComponentOperator::RadonView(first) = &model.components()[0] else {
        unreachable!("kind() checked every component");
    };
    let detectors = first.geometry.detectors;
    let pixel = first.geometry.pixel_size;
    let padded = (2 * detectors).next_power_of_two();
    let response = hann_ramp(padded);
    let mut planner = FftPlanner::new();
    let forward = planner.plan_fft_forward(padded);
    let inverse = planner.plan_fft_inverse(padded);

    let mut filtered = Vec::with_capacity(y.blocks.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); padded];
    for block in &y.blocks {
        buf.fill(Complex64::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(block.data()) {
            b.re = v;
        }
        forward.process(&mut buf);
        for (b, &h) in buf.iter_mut().zip(&response) {
            *b *= h;
        }
        inverse.process(&mut buf);
        let values = buf[..detectors]
            .iter()
            .map(|c| c.re / padded as f64)
            .collect();
        filtered.push(Tensor::new(block.shape().to_vec(), values)?);
    }
    let bp = model.adjoint(&MeasurementSet::noiseless(filtered))?;
    let scale = std::f64::consts::PI / (model.num_components() as f64 * pixel * pixel);
    Ok(bp.scale(scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::model::{make_conv_model, make_radon_model};

    #[test]
    fn zero_measurements_give_zero_images() {
        let model = make_radon_model(8, 6, 12).unwrap();
        let y = model.apply(&Tensor::zeros(&[8, 8])).unwrap();
        assert_eq!(fbp_init(&y, &model).unwrap().norm(), 0.0);
        assert_eq!(bp_init(&y, &model).unwrap().norm(), 0.0);
    }

    #[test]
    fn fbp_needs_radon() {
        let model = make_conv_model(8, 2, 0).unwrap();
        let y = model.apply(&Tensor::full(&[8, 8], 1.0)).unwrap();
        assert!(fbp_init(&y, &model).is_err());
    }
}
