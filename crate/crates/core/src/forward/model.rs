use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::convfilter::ConvFilter;
use crate::forward::operator::{ComponentOperator, DenseMatrix};
use crate::forward::radon::{RadonGeometry, RadonView};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Radon,
    Conv,
    Matrix,
    Mixed,
}

/// `A = [A_1; …; A_I]` over a common image shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardModel {
    image_shape: [usize; 2],
    components: Vec<ComponentOperator>,
}

impl ForwardModel {
    pub fn new(image_shape: [usize; 2], components: Vec<ComponentOperator>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyModel);
        }
        let n = image_shape[0] * image_shape[1];
        if let Some(bad) = components.iter().find(|c| c.input_len() != n) {
            return Err(Error::InvalidArgument(format!(
                "component expects {} pixels, image has {n}",
                bad.input_len()
            )));
        }
        Ok(Self {
            image_shape,
            components,
        })
    }

    pub fn image_shape(&self) -> [usize; 2] {
        self.image_shape
    }

    pub fn image_len(&self) -> usize {
        self.image_shape[0] * self.image_shape[1]
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[ComponentOperator] {
        &self.components
    }

    pub fn component(&self, i: usize) -> Result<&ComponentOperator> {
        self.components.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            count: self.components.len(),
        })
    }

    pub fn kind(&self) -> ModelKind {
        let kind_of = |c: &ComponentOperator| match c {
            ComponentOperator::RadonView(_) => ModelKind::Radon,
            ComponentOperator::ConvFilter(_) => ModelKind::Conv,
            ComponentOperator::ExplicitMatrix(_) => ModelKind::Matrix,
        };
        let first = kind_of(&self.components[0]);
        if self.components.iter().all(|c| kind_of(c) == first) {
            first
        } else {
            ModelKind::Mixed
        }
    }

    fn check_image(&self, x: &Tensor) -> Result<()> {
        x.ensure_shape(&self.image_shape)
    }

    fn check_measurements(&self, y: &MeasurementSet) -> Result<()> {
        if y.blocks.len() != self.components.len() {
            return Err(Error::InvalidArgument(format!(
                "{} measurement blocks for {} components",
                y.blocks.len(),
                self.components.len()
            )));
        }
        for (c, b) in self.components.iter().zip(&y.blocks) {
            b.ensure_shape(&c.output_shape())?;
        }
        Ok(())
    }

    /// Noiseless measurements `y_i = A_i x`.
    pub fn apply(&self, x: &Tensor) -> Result<MeasurementSet> {
        self.check_image(x)?;
        let blocks = self
            .components
            .iter()
            .map(|c| {
                let mut out = vec![0.0; c.output_len()];
                c.apply(x.data(), &mut out);
                Tensor::new(c.output_shape(), out)
            })
            .collect::<Result<_>>()?;
        Ok(MeasurementSet::noiseless(blocks))
    }

    /// `Aᴴ y = Σ_i A_iᴴ y_i`.
    pub fn adjoint(&self, y: &MeasurementSet) -> Result<Tensor> {
        self.check_measurements(y)?;
        let mut acc = vec![0.0; self.image_len()];
        let mut scratch = vec![0.0; self.image_len()];
        for (c, b) in self.components.iter().zip(&y.blocks) {
            c.adjoint(b.data(), &mut scratch);
            for (a, s) in acc.iter_mut().zip(&scratch) {
                *a += s;
            }
        }
        Tensor::new(self.image_shape.to_vec(), acc)
    }

    /// `A_iᴴ(A_i x − y_i)` written into `out`.
    fn component_gradient(
        &self,
        i: usize,
        x: &[f64],
        y_i: &[f64],
        residual: &mut Vec<f64>,
        out: &mut [f64],
    ) {
        let c = &self.components[i];
        residual.resize(c.output_len(), 0.0);
        c.apply(x, residual);
        for (r, y) in residual.iter_mut().zip(y_i) {
            *r -= y;
        }
        c.adjoint(residual, out);
    }

    /// `(1/n) Σ_{i ∈ indices} A_iᴴ(A_i x − y_i)`, summed in the order given.
    fn averaged_gradient(
        &self,
        x: &Tensor,
        y: &MeasurementSet,
        indices: impl ExactSizeIterator<Item = usize>,
    ) -> Result<Tensor> {
        self.check_image(x)?;
        self.check_measurements(y)?;
        let count = indices.len();
        if count == 0 {
            return Err(Error::InvalidArgument("empty index set".into()));
        }
        let mut acc = vec![0.0; self.image_len()];
        let mut scratch = vec![0.0; self.image_len()];
        let mut residual = Vec::new();
        for i in indices {
            if i >= self.components.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    count: self.components.len(),
                });
            }
            self.component_gradient(i, x.data(), y.blocks[i].data(), &mut residual, &mut scratch);
            for (a, s) in acc.iter_mut().zip(&scratch) {
                *a += s;
            }
        }
        let inv = 1.0 / count as f64;
        for a in acc.iter_mut() {
            *a *= inv;
        }
        Tensor::new(self.image_shape.to_vec(), acc)
    }

    /// Full-batch data-consistency gradient `(1/I) Σ_i A_iᴴ(A_i x − y_i)`,
    /// accumulated in ascending component order.
    pub fn full_gradient(&self, x: &Tensor, y: &MeasurementSet) -> Result<Tensor> {
        self.averaged_gradient(x, y, 0..self.components.len())
    }

    /// Minibatch gradient `(1/B) Σ_b A_{i_b}ᴴ(A_{i_b} x − y_{i_b})` over
    /// zero-based component `indices` (duplicates allowed).
    pub fn minibatch_gradient(
        &self,
        x: &Tensor,
        y: &MeasurementSet,
        indices: &[usize],
    ) -> Result<Tensor> {
        self.averaged_gradient(x, y, indices.iter().copied())
    }

    /// `(1/n) Σ_{i ∈ indices} A_iᴴ A_i v`: the linear part of the averaged
    /// gradient, which is symmetric and therefore its own transpose.
    pub fn normal_apply(&self, v: &Tensor, indices: &[usize]) -> Result<Tensor> {
        self.check_image(v)?;
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty index set".into()));
        }
        let mut acc = vec![0.0; self.image_len()];
        let mut scratch = vec![0.0; self.image_len()];
        let mut tmp = Vec::new();
        for &i in indices {
            let c = self.component(i)?;
            tmp.resize(c.output_len(), 0.0);
            c.apply(v.data(), &mut tmp);
            c.adjoint(&tmp, &mut scratch);
            for (a, s) in acc.iter_mut().zip(&scratch) {
                *a += s;
            }
        }
        let inv = 1.0 / indices.len() as f64;
        for a in acc.iter_mut() {
            *a *= inv;
        }
        Tensor::new(self.image_shape.to_vec(), acc)
    }

    /// `(1/I) Σ_i ½‖A_i x − y_i‖²`, whose gradient is [`Self::full_gradient`].
    pub fn data_fidelity(&self, x: &Tensor, y: &MeasurementSet) -> Result<f64> {
        self.check_image(x)?;
        self.check_measurements(y)?;
        let mut total = 0.0;
        let mut out = Vec::new();
        for (c, b) in self.components.iter().zip(&y.blocks) {
            out.resize(c.output_len(), 0.0);
            c.apply(x.data(), &mut out);
            total += out
                .iter()
                .zip(b.data())
                .map(|(a, y)| (a - y) * (a - y))
                .sum::<f64>();
        }
        Ok(0.5 * total / self.components.len() as f64)
    }

    /// `‖A x − y‖` over all blocks.
    pub fn residual_norm(&self, x: &Tensor, y: &MeasurementSet) -> Result<f64> {
        Ok((2.0 * self.num_components() as f64 * self.data_fidelity(x, y)?).sqrt())
    }

    /// Largest eigenvalue of `(1/I) Σ_i A_iᴴ A_i` by power iteration from a
    /// fixed deterministic start.
    pub fn lipschitz_estimate(&self, iterations: usize) -> Result<f64> {
        let all: Vec<usize> = (0..self.num_components()).collect();
        let mut v = Tensor::new(
            self.image_shape.to_vec(),
            (0..self.image_len())
                .map(|k| 1.0 + 0.5 * ((k * 7919) % 13) as f64 / 13.0)
                .collect(),
        )?;
        let mut lambda = 0.0;
        for _ in 0..iterations.max(1) {
            let norm = v.norm();
            if norm == 0.0 {
                return Ok(0.0);
            }
            v = v.scale(1.0 / norm);
            let w = self.normal_apply(&v, &all)?;
            lambda = w.dot(&v)?;
            v = w;
        }
        Ok(lambda)
    }
}

/// `batch` i.i.d. uniform draws from `0..count` (with replacement).
pub fn sample_indices(batch: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    assert!(batch >= 1 && count >= 1, "sample_indices needs B, I >= 1");
    (0..batch).map(|_| rng.random_range(0..count)).collect()
}

/// Noise provenance carried alongside measurement blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseInfo {
    /// Input SNR in dB; `None` for noiseless data.
    pub snr_db: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub blocks: Vec<Tensor>,
    pub noise: NoiseInfo,
}

impl MeasurementSet {
    pub fn noiseless(blocks: Vec<Tensor>) -> Self {
        Self {
            blocks,
            noise: NoiseInfo::default(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().map(Tensor::norm_sq).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.scale(factor)).collect(),
            noise: self.noise,
        }
    }

    pub fn sub(&self, other: &MeasurementSet) -> Result<Self> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::InvalidArgument("block counts differ".into()));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            noise: self.noise,
        })
    }
}

/// Adds i.i.d. Gaussian noise `e` scaled so that `20·log10(‖y‖/‖e‖)` equals
/// `snr_db` exactly for the realized draw. `snr_db = +∞` leaves `y` unchanged.
pub fn add_awgn_to_input_snr(
    y: &MeasurementSet,
    snr_db: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("snr_db is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(y.clone());
    }
    let y_norm = y.norm();
    if y_norm == 0.0 {
        return Err(Error::ZeroMeasurements);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise: Vec<Tensor> = y
        .blocks
        .iter()
        .map(|b| {
            let data = (0..b.len()).map(|_| normal.sample(&mut rng)).collect();
            Tensor::new(b.shape().to_vec(), data)
        })
        .collect::<Result<_>>()?;
    let e_norm = noise.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    let scale = y_norm * 10f64.powf(-snr_db / 20.0) / e_norm;
    let blocks = y
        .blocks
        .iter()
        .zip(&noise)
        .map(|(b, e)| {
            let mut out = b.clone();
            out.axpy(scale, e)?;
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(MeasurementSet {
        blocks,
        noise: NoiseInfo {
            snr_db: Some(snr_db),
            seed: Some(seed),
        },
    })
}

/// Parallel-beam model with `views` equispaced angles over `[0°, 180°)`.
pub fn make_radon_model(size: usize, views: usize, detectors: usize) -> Result<ForwardModel> {
    make_radon_model_with(
        RadonGeometry {
            size,
            detectors,
            supersample: 1,
            pixel_size: 1.0,
        },
        views,
        None,
    )
}

/// Like [`make_radon_model`] with full geometry control and optional
/// Gaussian angle jitter `(std in degrees, seed)`.
pub fn make_radon_model_with(
    geometry: RadonGeometry,
    views: usize,
    jitter: Option<(f64, u64)>,
) -> Result<ForwardModel> {
    if geometry.size == 0 || views == 0 || geometry.detectors == 0 || geometry.supersample == 0 {
        return Err(Error::InvalidArgument(
            "size, views, detectors and supersample must be positive".into(),
        ));
    }
    if !(geometry.pixel_size > 0.0) {
        return Err(Error::InvalidArgument("pixel_size must be positive".into()));
    }
    let mut jitter = jitter.map(|(std_deg, seed)| {
        (
            Normal::new(0.0, std_deg.to_radians()).expect("finite jitter std"),
            ChaCha8Rng::seed_from_u64(seed),
        )
    });
    let components = (0..views)
        .map(|k| {
            let mut angle = std::f64::consts::PI * k as f64 / views as f64;
            if let Some((dist, rng)) = jitter.as_mut() {
                angle += dist.sample(rng);
            }
            ComponentOperator::RadonView(RadonView::new(geometry, angle))
        })
        .collect();
    ForwardModel::new([geometry.size, geometry.size], components)
}

/// `components` random band-limited real convolutions (the intensity
/// diffraction stand-in).
pub fn make_conv_model(size: usize, components: usize, seed: u64) -> Result<ForwardModel> {
    if size == 0 || components == 0 {
        return Err(Error::InvalidArgument("size and components must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = (0..components)
        .map(|_| ComponentOperator::ConvFilter(ConvFilter::random_band_limited(size, &mut rng)))
        .collect();
    ForwardModel::new([size, size], comps)
}

/// `components` dense Gaussian blocks with `rows` rows each, entries
/// `N(0, 1/rows)`.
pub fn make_matrix_model(
    size: usize,
    components: usize,
    rows: usize,
    seed: u64,
) -> Result<ForwardModel> {
    if size == 0 || components == 0 || rows == 0 {
        return Err(Error::InvalidArgument(
            "size, components and rows must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).expect("finite std");
    let cols = size * size;
    let comps = (0..components)
        .map(|_| {
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            ComponentOperator::ExplicitMatrix(DenseMatrix::new(rows, cols, data))
        })
        .collect();
    ForwardModel::new([size, size], comps)
}

/// JSON description of a forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Radon {
        size: usize,
        views: usize,
        #[serde(default)]
        detectors: Option<usize>,
        #[serde(default = "one")]
        supersample: usize,
        #[serde(default = "unit")]
        pixel_size: f64,
        /// Gaussian view-angle jitter in degrees; off by default.
        #[serde(default)]
        angle_jitter_deg: Option<f64>,
        #[serde(default)]
        seed: u64,
    },
    Conv {
        size: usize,
        components: usize,
        #[serde(default)]
        seed: u64,
    },
    Matrix {
        size: usize,
        components: usize,
        rows: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn size(&self) -> usize {
        match *self {
            ModelConfig::Radon { size, .. }
            | ModelConfig::Conv { size, .. }
            | ModelConfig::Matrix { size, .. } => size,
        }
    }

    pub fn components(&self) -> usize {
        match *self {
            ModelConfig::Radon { views, .. } => views,
            ModelConfig::Conv { components, .. } | ModelConfig::Matrix { components, .. } => {
                components
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size() == 0 || self.components() == 0 {
            return Err(Error::InvalidArgument(
                "model size and component count must be positive".into(),
            ));
        }
        match *self {
            ModelConfig::Radon {
                detectors,
                supersample,
                pixel_size,
                angle_jitter_deg,
                ..
            } => {
                if detectors == Some(0) || supersample == 0 || !(pixel_size > 0.0) {
                    return Err(Error::InvalidArgument(
                        "radon detectors, supersample and pixel_size must be positive".into(),
                    ));
                }
                if angle_jitter_deg.is_some_and(|j| !(j >= 0.0 && j.is_finite())) {
                    return Err(Error::InvalidArgument(
                        "angle_jitter_deg must be finite and non-negative".into(),
                    ));
                }
            }
            ModelConfig::Matrix { rows: 0, .. } => {
                return Err(Error::InvalidArgument("matrix rows must be positive".into()))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ForwardModel> {
        self.validate()?;
        match *self {
            ModelConfig::Radon {
                size,
                views,
                detectors,
                supersample,
                pixel_size,
                angle_jitter_deg,
                seed,
            } => make_radon_model_with(
                RadonGeometry {
                    size,
                    detectors: detectors.unwrap_or_else(|| RadonGeometry::default_detectors(size)),
                    supersample,
                    pixel_size,
                },
                views,
                angle_jitter_deg.map(|j| (j, seed)),
            ),
            ModelConfig::Conv {
                size,
                components,
                seed,
            } => make_conv_model(size, components, seed),
            ModelConfig::Matrix {
                size,
                components,
                rows,
                seed,
            } => make_matrix_model(size, components, rows, seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_identity_model() -> (ForwardModel, MeasurementSet) {
        let model = ForwardModel::new(
            [1, 2],
            vec![
                ComponentOperator::ExplicitMatrix(DenseMatrix::identity(2)),
                ComponentOperator::ExplicitMatrix(DenseMatrix::scaled_identity(2, 2.0)),
            ],
        )
        .unwrap();
        let y = MeasurementSet::noiseless(vec![
            Tensor::vector(vec![0.0, 0.0]),
            Tensor::vector(vec![2.0, 2.0]),
        ]);
        (model, y)
    }

    #[test]
    fn full_gradient_two_component_example() {
        let (model, y) = two_identity_model();
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let g = model.full_gradient(&x, &y).unwrap();
        assert_eq!(g.data(), &[0.5, 3.0]);
        let g1 = model.minibatch_gradient(&x, &y, &[0]).unwrap();
        assert_eq!(g1.data(), &[1.0, 2.0]);
    }

    #[test]
    fn minibatch_rejects_bad_index() {
        let (model, y) = two_identity_model();
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            model.minibatch_gradient(&x, &y, &[0, 2]),
            Err(Error::IndexOutOfRange { index: 2, count: 2 })
        ));
    }

    #[test]
    fn consistent_point_has_zero_gradient() {
        let model = make_radon_model(8, 5, 12).unwrap();
        let x = Tensor::new(vec![8, 8], (0..64).map(|v| (v % 5) as f64).collect()).unwrap();
        let y = model.apply(&x).unwrap();
        assert_eq!(model.full_gradient(&x, &y).unwrap().norm(), 0.0);
    }

    #[test]
    fn empty_model_is_an_error() {
        assert!(matches!(ForwardModel::new([2, 2], vec![]), Err(Error::EmptyModel)));
    }

    #[test]
    fn single_component_sampling_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_indices(50, 1, &mut rng).iter().all(|&i| i == 0));
    }

    #[test]
    fn infinite_snr_is_identity_and_zero_measurements_error() {
        let (_, y) = two_identity_model();
        assert_eq!(add_awgn_to_input_snr(&y, f64::INFINITY, 3).unwrap(), y);
        let zero = MeasurementSet::noiseless(vec![Tensor::zeros(&[3])]);
        assert!(matches!(
            add_awgn_to_input_snr(&zero, 20.0, 3),
            Err(Error::ZeroMeasurements)
        ));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok: ModelConfig =
            serde_json::from_str(r#"{"kind":"radon","size":8,"views":4}"#).unwrap();
        assert_eq!(ok.build().unwrap().num_components(), 4);
        assert!(serde_json::from_str::<ModelConfig>(
            r#"{"kind":"radon","size":8,"views":4,"colour":1}"#
        )
        .is_err());
    }
}
