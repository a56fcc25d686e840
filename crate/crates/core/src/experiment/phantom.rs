use rand::Rng;

use crate::tensor::Tensor;

/// Random composition of 3–8 ellipses and Gaussian blobs with intensities in
/// `[0.2, 1]` on a zero background, clipped to `[0, 1]`. Coordinates are
/// normalized to `[-1, 1]²`.
pub fn random_phantom(size: usize, rng: &mut impl Rng) -> Tensor {
    let shapes = rng.random_range(3..=8);
    let mut img = vec![0.0; size * size];
    let coord = |k: usize| (2.0 * k as f64 + 1.0) / size as f64 - 1.0;
    for _ in 0..shapes {
        let intensity = rng.random_range(0.2..=1.0);
        let cx = rng.random_range(-0.55..0.55);
        let cy = rng.random_range(-0.55..0.55);
        if rng.random_bool(0.5) {
            let a: f64 = rng.random_range(0.12..0.45);
            let b: f64 = rng.random_range(0.12..0.45);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let (s, c) = phi.sin_cos();
            for i in 0..size {
                for j in 0..size {
                    let (dx, dy) = (coord(j) - cx, coord(i) - cy);
                    let u = (c * dx + s * dy) / a;
                    let v = (-s * dx + c * dy) / b;
                    if u * u + v * v <= 1.0 {
                        img[i * size + j] += intensity;
                    }
                }
            }
        } else {
            let width: f64 = rng.random_range(0.08..0.25);
            for i in 0..size {
                for j in 0..size {
                    let (dx, dy) = (coord(j) - cx, coord(i) - cy);
                    img[i * size + j] +=
                        intensity * (-(dx * dx + dy * dy) / (2.0 * width * width)).exp();
                }
            }
        }
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(vec![size, size], img).expect("square image")
}

/// Unit-intensity disk of normalized radius `radius` centered at
/// normalized `(cx, cy)` (`x` to the right, `y` downwards).
pub fn disk_phantom(size: usize, cx: f64, cy: f64, radius: f64) -> Tensor {
    let coord = |k: usize| (2.0 * k as f64 + 1.0) / size as f64 - 1.0;
    let mut img = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let (dx, dy) = (coord(j) - cx, coord(i) - cy);
            if dx * dx + dy * dy <= radius * radius {
                img[i * size + j] = 1.0;
            }
        }
    }
    Tensor::new(vec![size, size], img).expect("square image")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phantoms_are_in_range_and_seeded() {
        for seed in 0..20 {
            let a = random_phantom(16, &mut ChaCha8Rng::seed_from_u64(seed));
            let b = random_phantom(16, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(a, b);
            assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(a.max() > 0.0);
        }
    }

    #[test]
    fn disk_is_symmetric() {
        let d = disk_phantom(9, 0.0, 0.0, 0.5);
        assert_eq!(d.data()[4 * 9 + 4], 1.0);
        assert_eq!(d.data()[0], 0.0);
        assert_eq!(d.data()[4 * 9 + 2], d.data()[4 * 9 + 6]);
    }
}
