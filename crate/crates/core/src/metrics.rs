//! Image-quality metrics: affine-fit SNR and SSIM.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value written to CSV in place of an infinite SNR.
pub const SNR_CAP_DB: f64 = 300.0;

/// `max_{a,b} 20·log10(‖x‖ / ‖x − (a·x̂ + b)‖)`, with `(a, b)` from the
/// least-squares regression of `x` on `x̂`. Returns `+∞` when the fit is
/// exact.
pub fn snr_db(xhat: &Tensor, x: &Tensor) -> Result<f64> {
    xhat.ensure_same_shape(x)?;
    let x_norm = x.norm();
    if x_norm == 0.0 {
        return Err(Error::ZeroGroundTruth);
    }
    let (a, _) = affine_fit(xhat, x);
    let xm = xhat.mean();
    let ym = x.mean();
    let res_sq: f64 = xhat
        .data()
        .iter()
        .zip(x.data())
        .map(|(&h, &v)| {
            let r = (v - ym) - a * (h - xm);
            r * r
        })
        .sum();
    let res = res_sq.sqrt();
    if res < 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (x_norm / res).log10())
}

/// `(a, b)` minimizing `‖x − (a·x̂ + b)‖`; `a = 0` for constant `x̂`.
pub fn affine_fit(xhat: &Tensor, x: &Tensor) -> (f64, f64) {
    let xm = xhat.mean();
    let ym = x.mean();
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&h, &v) in xhat.data().iter().zip(x.data()) {
        sxy += (h - xm) * (v - ym);
        sxx += (h - xm) * (h - xm);
    }
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (a, ym - a * xm)
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_weights() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut w = [0.0; 2 * SSIM_RADIUS + 1];
    for (k, v) in w.iter_mut().enumerate() {
        let d = k as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    w
}

/// Weighted local mean with an 11×11 Gaussian window that is truncated at
/// the image border and renormalized over the pixels it covers.
fn local_mean(data: &[f64], h: usize, w: usize, weights: &[f64]) -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let blur = |len: usize, at: &dyn Fn(usize) -> f64, center: usize| -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for d in -r..=r {
            let p = center as isize + d;
            if p >= 0 && (p as usize) < len {
                let wt = weights[(d + r) as usize];
                s += wt * at(p as usize);
                n += wt;
            }
        }
        s / n
    };
    let mut rows = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            rows[i * w + j] = blur(w, &|q| data[i * w + q], j);
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = blur(h, &|p| rows[p * w + j], i);
        }
    }
    out
}

/// Mean SSIM over an `[h, w]` image pair.
pub fn ssim(xhat: &Tensor, x: &Tensor, dynamic_range: f64) -> Result<f64> {
    xhat.ensure_same_shape(x)?;
    if !(dynamic_range > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let (h, w) = match *x.shape() {
        [h, w] => (h, w),
        [n] => (1, n),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "ssim expects an image, got {:?}",
                x.shape()
            )))
        }
    };
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let weights = gaussian_weights();
    let p = xhat.data();
    let q = x.data();
    let pp: Vec<f64> = p.iter().map(|v| v * v).collect();
    let qq: Vec<f64> = q.iter().map(|v| v * v).collect();
    let pq: Vec<f64> = p.iter().zip(q).map(|(a, b)| a * b).collect();
    let mu_p = local_mean(p, h, w, &weights);
    let mu_q = local_mean(q, h, w, &weights);
    let e_pp = local_mean(&pp, h, w, &weights);
    let e_qq = local_mean(&qq, h, w, &weights);
    let e_pq = local_mean(&pq, h, w, &weights);
    let mut total = 0.0;
    for k in 0..h * w {
        let (mp, mq) = (mu_p[k], mu_q[k]);
        let vp = e_pp[k] - mp * mp;
        let vq = e_qq[k] - mq * mq;
        let cov = e_pq[k] - mp * mq;
        total += ((2.0 * mp * mq + c1) * (2.0 * cov + c2))
            / ((mp * mp + mq * mq + c1) * (vp + vq + c2));
    }
    Ok(total / (h * w) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub image_id: String,
    pub method: String,
    pub snr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    /// Population statistics; infinite values participate as-is.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        Some(Self { mean, median, std })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    /// Scores `xhat` against `x` and appends a row; SSIM uses the dynamic
    /// range `dynamic_range`.
    pub fn push(
        &mut self,
        image_id: impl Into<String>,
        method: impl Into<String>,
        xhat: &Tensor,
        x: &Tensor,
        dynamic_range: f64,
    ) -> Result<()> {
        self.rows.push(MetricRow {
            image_id: image_id.into(),
            method: method.into(),
            snr_db: snr_db(xhat, x)?,
            ssim: ssim(xhat, x, dynamic_range)?,
        });
        Ok(())
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    pub fn snr_summary(&self, method: &str) -> Option<Summary> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.snr_db.min(SNR_CAP_DB))
            .collect();
        Summary::of(&v)
    }

    pub fn ssim_summary(&self, method: &str) -> Option<Summary> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.ssim)
            .collect();
        Summary::of(&v)
    }

    /// CSV with columns `image_id, method, snr_db, ssim`; SNR is capped at
    /// [`SNR_CAP_DB`].
    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["image_id", "method", "snr_db", "ssim"])?;
        for r in &self.rows {
            w.write_record([
                r.image_id.clone(),
                r.method.clone(),
                format!("{}", r.snr_db.min(SNR_CAP_DB)),
                format!("{}", r.ssim),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<metrics>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec())
    }

    #[test]
    fn perfect_match_is_infinite() {
        let x = v(&[1.0, 2.0, 3.0]);
        assert_eq!(snr_db(&x, &x).unwrap(), f64::INFINITY);
        assert!(matches!(snr_db(&x, &v(&[0.0; 3])), Err(Error::ZeroGroundTruth)));
    }

    #[test]
    fn constant_estimate_fits_the_mean() {
        let x = v(&[1.0, 2.0, 3.0]);
        let (a, b) = affine_fit(&v(&[4.0; 3]), &x);
        assert_eq!((a, b), (0.0, 2.0));
        // residual is x − mean, ‖·‖² = 2
        let expected = 10.0 * (14.0f64 / 2.0).log10();
        assert!((snr_db(&v(&[4.0; 3]), &x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn csv_caps_infinite_snr() {
        let mut report = MetricReport::default();
        let x = Tensor::full(&[4, 4], 0.5).zip_map(&Tensor::new(vec![4, 4], (0..16).map(f64::from).collect()).unwrap(), |a, b| a + b).unwrap();
        report.push("0", "exact", &x, &x, 1.0).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("0,exact,300,1"));
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 3.0, 2.0, 6.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (3.5f64).sqrt()).abs() < 1e-15);
        assert!(Summary::of(&[]).is_none());
    }
}
