//! Forward-difference image gradient `D` with Neumann boundary and its exact
//! transpose. Output layout `[2, h, w]`: channel 0 horizontal, channel 1
//! vertical. Differences across the last column/row are zero.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_dims(x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(Error::InvalidArgument(format!(
            "expected a 2-D image, got shape {:?}",
            x.shape()
        ))),
    }
}

pub fn discrete_gradient(x: &Tensor) -> Result<Tensor> {
    let (h, w) = image_dims(x)?;
    let v = x.data();
    let mut out = vec![0.0; 2 * h * w];
    let (dx, dy) = out.split_at_mut(h * w);
    for i in 0..h {
        for j in 0..w {
            let p = i * w + j;
            if j + 1 < w {
                dx[p] = v[p + 1] - v[p];
            }
            if i + 1 < h {
                dy[p] = v[p + w] - v[p];
            }
        }
    }
    Tensor::new(vec![2, h, w], out)
}

pub fn discrete_gradient_adjoint(p: &Tensor) -> Result<Tensor> {
    let [2, h, w] = *p.shape() else {
        return Err(Error::InvalidArgument(format!(
            "expected [2, h, w], got {:?}",
            p.shape()
        )));
    };
    let (px, py) = p.data().split_at(h * w);
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let q = i * w + j;
            if j + 1 < w {
                out[q] -= px[q];
                out[q + 1] += px[q];
            }
            if i + 1 < h {
                out[q] -= py[q];
                out[q + w] += py[q];
            }
        }
    }
    Tensor::new(vec![h, w], out)
}

/// Anisotropic total variation `‖D x‖₁`.
pub fn total_variation(x: &Tensor) -> Result<f64> {
    Ok(discrete_gradient(x)?.data().iter().map(|v| v.abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_gradient() {
        let g = discrete_gradient(&Tensor::full(&[4, 5], 3.5)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_ramp() {
        let (h, w) = (3, 5);
        let x = Tensor::new(vec![h, w], (0..h * w).map(|p| (p % w) as f64).collect()).unwrap();
        let g = discrete_gradient(&x).unwrap();
        for i in 0..h {
            for j in 0..w {
                let expected = if j + 1 < w { 1.0 } else { 0.0 };
                assert_eq!(g.data()[i * w + j], expected);
                assert_eq!(g.data()[h * w + i * w + j], 0.0);
            }
        }
    }

    #[test]
    fn rejects_non_image() {
        assert!(discrete_gradient(&Tensor::zeros(&[2, 2, 2])).is_err());
        assert!(discrete_gradient_adjoint(&Tensor::zeros(&[3, 2, 2])).is_err());
    }
}
