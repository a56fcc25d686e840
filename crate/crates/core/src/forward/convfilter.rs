//! Circular 2-D convolution components evaluated in the frequency domain.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

/// Row/column FFT plans for an `n x n` grid.
#[derive(Clone)]
pub(crate) struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub(crate) fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn transform(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        for row in buf.chunks_exact_mut(n) {
            fft.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = buf[i * n + j];
            }
            fft.process(&mut col);
            for i in 0..n {
                buf[i * n + j] = col[i];
            }
        }
    }

    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.forward);
    }

    /// Normalized inverse (divides by `n²`).
    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.inverse);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// `y = Re(F⁻¹ (H ⊙ F x))` on an `n x n` image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvFilter {
    size: usize,
    /// Frequency response in FFT index order, `(re, im)` pairs.
    response: Vec<(f64, f64)>,
    #[serde(skip, default)]
    plans: Option<Fft2>,
}

impl PartialEq for ConvFilter {
    fn eq(&self, other: &Self) -> bool {
        self.size == other.size && self.response == other.response
    }
}

impl ConvFilter {
    pub fn from_response(size: usize, response: Vec<Complex64>) -> Self {
        assert_eq!(response.len(), size * size, "response must be size x size");
        Self {
            size,
            response: response.iter().map(|c| (c.re, c.im)).collect(),
            plans: Some(Fft2::new(size)),
        }
    }

    /// Circular convolution with a spatial `size x size` kernel (origin at
    /// index `(0, 0)`).
    pub fn from_kernel(size: usize, kernel: &[f64]) -> Self {
        assert_eq!(kernel.len(), size * size, "kernel must be size x size");
        let fft = Fft2::new(size);
        let mut buf: Vec<Complex64> = kernel.iter().map(|&k| Complex64::new(k, 0.0)).collect();
        fft.forward(&mut buf);
        Self::from_response(size, buf)
    }

    /// The identity: a delta kernel.
    pub fn identity(size: usize) -> Self {
        Self::from_response(size, vec![Complex64::new(1.0, 0.0); size * size])
    }

    /// A band-limited real kernel resembling one intensity-diffraction
    /// transfer function: absorption and phase terms built from a circular
    /// pupil shifted by a random illumination offset.
    pub fn random_band_limited(size: usize, rng: &mut impl Rng) -> Self {
        let n = size as isize;
        let pupil_radius = size as f64 / 4.0;
        let r = rng.random_range(0.0..0.8) * pupil_radius;
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let (sy, sx) = (r * phi.sin(), r * phi.cos());
        let absorption = rng.random_range(0.5..1.5);
        let phase = rng.random_range(-1.0..1.0);
        let freq = |k: isize| if k <= n / 2 { k } else { k - n } as f64;
        let pupil = |fy: f64, fx: f64| {
            if fy * fy + fx * fx <= pupil_radius * pupil_radius {
                1.0
            } else {
                0.0
            }
        };
        let mut response = Vec::with_capacity(size * size);
        for ky in 0..n {
            for kx in 0..n {
                let (fy, fx) = (freq(ky), freq(kx));
                let plus = pupil(fy - sy, fx - sx);
                let minus = pupil(fy + sy, fx + sx);
                // Both terms are Hermitian, so the spatial kernel is real.
                response.push(Complex64::new(
                    absorption * (plus + minus),
                    phase * (plus - minus),
                ));
            }
        }
        Self::from_response(size, response)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn len(&self) -> usize {
        self.size * self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    fn plans(&self) -> Fft2 {
        self.plans.clone().unwrap_or_else(|| Fft2::new(self.size))
    }

    fn filter(&self, x: &[f64], out: &mut [f64], conjugate: bool) {
        let fft = self.plans();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut buf);
        for (b, &(re, im)) in buf.iter_mut().zip(&self.response) {
            let h = Complex64::new(re, if conjugate { -im } else { im });
            *b *= h;
        }
        fft.inverse(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re;
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.filter(x, out, false);
    }

    /// Correlation with the same kernel.
    pub fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.filter(y, out, true);
    }
}
