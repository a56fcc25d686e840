//! Single-view parallel-beam projector.
//!
//! Pixel-driven: every (sub)pixel centre is projected onto the detector axis
//! and its mass is split linearly between the two nearest bins. The adjoint
//! walks the same loop and gathers instead of scattering, so it is the exact
//! transpose of the forward discretization.

use serde::{Deserialize, Serialize};

/// Geometry shared by every view of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadonGeometry {
    /// Image is `size x size`.
    pub size: usize,
    pub detectors: usize,
    /// Sub-pixel samples per axis.
    pub supersample: usize,
    /// Physical pixel edge length; the detector pitch equals it.
    pub pixel_size: f64,
}

impl RadonGeometry {
    /// Enough detectors to catch the image diagonal.
    pub fn default_detectors(size: usize) -> usize {
        ((size as f64) * std::f64::consts::SQRT_2).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadonView {
    pub geometry: RadonGeometry,
    /// Radians, measured from the image x axis.
    pub angle: f64,
}

impl RadonView {
    pub fn new(geometry: RadonGeometry, angle: f64) -> Self {
        Self { geometry, angle }
    }

    pub fn input_len(&self) -> usize {
        self.geometry.size * self.geometry.size
    }

    pub fn output_len(&self) -> usize {
        self.geometry.detectors
    }

    /// Calls `visit(pixel, bin, weight)` for every non-zero matrix entry
    /// contribution (entries may repeat; they add up).
    #[inline]
    fn for_each_entry(&self, mut visit: impl FnMut(usize, usize, f64)) {
        let g = &self.geometry;
        let n = g.size;
        let s = g.supersample;
        let d = g.detectors as isize;
        let (sin, cos) = self.angle.sin_cos();
        let centre = (n as f64 - 1.0) / 2.0;
        let det_centre = (g.detectors as f64 - 1.0) / 2.0;
        // Pixel area over detector pitch, split across sub-samples.
        let w = g.pixel_size / (s * s) as f64;
        let offsets: Vec<f64> = (0..s).map(|a| (a as f64 + 0.5) / s as f64 - 0.5).collect();
        for i in 0..n {
            for j in 0..n {
                let pixel = i * n + j;
                for &oy in &offsets {
                    let py = centre - i as f64 - oy;
                    for &ox in &offsets {
                        let px = j as f64 + ox - centre;
                        let u = px * cos + py * sin + det_centre;
                        let k = u.floor();
                        let frac = u - k;
                        let k = k as isize;
                        if k >= 0 && k < d {
                            visit(pixel, k as usize, w * (1.0 - frac));
                        }
                        if k + 1 >= 0 && k + 1 < d && frac > 0.0 {
                            visit(pixel, (k + 1) as usize, w * frac);
                        }
                    }
                }
            }
        }
    }

    /// `out = A x` (overwrites).
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.for_each_entry(|p, b, w| out[b] += w * x[p]);
    }

    /// `out = Aᵀ y` (overwrites).
    pub fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.for_each_entry(|p, b, w| out[p] += w * y[b]);
    }
}
