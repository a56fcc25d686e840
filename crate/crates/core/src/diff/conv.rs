//! Same-padded 2-D cross-correlation kernels shared by the tape's forward and
//! reverse passes.
//!
//! Layouts: input `[cin, h, w]`, kernels `[cout, cin, kh, kw]`, bias `[cout]`,
//! output `[cout, h, w]`. Out-of-image taps read zero.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeometry {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn kernel_len(&self) -> usize {
        self.kh * self.kw
    }

    /// For a tap offset `d` along an axis of length `n`, the destination range
    /// `lo..hi` whose source index `i + d` stays in bounds.
    fn valid(n: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (n as isize - d).min(n as isize).max(lo as isize) as usize;
        (lo, hi)
    }

    /// Visits every tap as `(ky, kx, dy, dx)` with signed offsets.
    fn taps(&self) -> impl Iterator<Item = (usize, usize, isize, isize)> + '_ {
        let ph = (self.kh / 2) as isize;
        let pw = (self.kw / 2) as isize;
        (0..self.kh).flat_map(move |ky| {
            (0..self.kw).map(move |kx| (ky, kx, ky as isize - ph, kx as isize - pw))
        })
    }
}

pub(crate) fn forward(g: &ConvGeometry, input: &[f64], kernels: &[f64], bias: &[f64]) -> Vec<f64> {
    let plane = g.plane();
    let w = g.width;
    let mut out = vec![0.0; g.cout * plane];
    for co in 0..g.cout {
        let out_c = &mut out[co * plane..(co + 1) * plane];
        out_c.fill(bias[co]);
        for ci in 0..g.cin {
            let in_c = &input[ci * plane..(ci + 1) * plane];
            let k = &kernels[(co * g.cin + ci) * g.kernel_len()..][..g.kernel_len()];
            for (ky, kx, dy, dx) in g.taps() {
                let wgt = k[ky * g.kw + kx];
                if wgt == 0.0 {
                    continue;
                }
                let (y0, y1) = ConvGeometry::valid(g.height, dy);
                let (x0, x1) = ConvGeometry::valid(w, dx);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let dst = &mut out_c[y * w + x0..y * w + x1];
                    let sx0 = (x0 as isize + dx) as usize;
                    let src = &in_c[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wgt * s;
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d input, d kernels, d bias)` for upstream gradient `grad_out`.
pub(crate) fn backward(
    g: &ConvGeometry,
    input: &[f64],
    kernels: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane = g.plane();
    let w = g.width;
    let mut grad_in = vec![0.0; g.cin * plane];
    let mut grad_k = vec![0.0; kernels.len()];
    let mut grad_b = vec![0.0; g.cout];
    for co in 0..g.cout {
        let go = &grad_out[co * plane..(co + 1) * plane];
        grad_b[co] = go.iter().sum();
        for ci in 0..g.cin {
            let in_c = &input[ci * plane..(ci + 1) * plane];
            let gi_c = &mut grad_in[ci * plane..(ci + 1) * plane];
            let kbase = (co * g.cin + ci) * g.kernel_len();
            for (ky, kx, dy, dx) in g.taps() {
                let kidx = kbase + ky * g.kw + kx;
                let wgt = kernels[kidx];
                let (y0, y1) = ConvGeometry::valid(g.height, dy);
                let (x0, x1) = ConvGeometry::valid(w, dx);
                let sx0 = (x0 as isize + dx) as usize;
                let n = x1 - x0;
                let mut acc = 0.0;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let go_row = &go[y * w + x0..y * w + x1];
                    let src = &in_c[sy * w + sx0..sy * w + sx0 + n];
                    acc += go_row.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    let gi_row = &mut gi_c[sy * w + sx0..sy * w + sx0 + n];
                    for (d, s) in gi_row.iter_mut().zip(go_row) {
                        *d += wgt * s;
                    }
                }
                grad_k[kidx] = acc;
            }
        }
    }
    (grad_in, grad_k, grad_b)
}
