use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::{derive_seed, random_phantom};
use crate::forward::{
    add_awgn_to_input_snr, bp_init, fbp_init, ForwardModel, MeasurementSet, ModelConfig,
    ModelKind, NoiseInfo,
};
use crate::tensor::Tensor;
use crate::training::{Dataset, Sample};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// FBP for radon models, backprojection otherwise.
    #[default]
    Auto,
    Bp,
    Fbp,
}

impl InitKind {
    pub fn compute(self, y: &MeasurementSet, model: &ForwardModel) -> Result<Tensor> {
        match self {
            InitKind::Auto if model.kind() == ModelKind::Radon => fbp_init(y, model),
            InitKind::Auto | InitKind::Bp => bp_init(y, model),
            InitKind::Fbp => fbp_init(y, model),
        }
    }
}

/// A synthetic problem: model, noise level and phantom counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: ModelConfig,
    pub train_count: usize,
    #[serde(default)]
    pub test_count: usize,
    /// Input SNR in dB; noiseless when absent.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitKind,
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.train_count == 0 {
            return Err(Error::InvalidArgument("train_count must be >= 1".into()));
        }
        if self.snr_db.is_some_and(|s| s.is_nan()) {
            return Err(Error::InvalidArgument("snr_db is NaN".into()));
        }
        Ok(())
    }
}

pub struct SyntheticProblem {
    pub model: ForwardModel,
    pub train: Dataset,
    pub test: Option<Dataset>,
}

/// Ground truth, noisy measurements and initialization of phantom `index`.
pub fn synthesize_sample(
    model: &ForwardModel,
    seed: u64,
    index: usize,
    snr_db: Option<f64>,
    init: InitKind,
) -> Result<(Sample, MeasurementSet)> {
    let size = model.image_shape()[0];
    let truth = random_phantom(size, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, index as u64])));
    let clean = model.apply(&truth)?;
    let y = match snr_db {
        Some(s) if s.is_finite() => {
            add_awgn_to_input_snr(&clean, s, derive_seed(seed, &[1, index as u64]))?
        }
        _ => clean.clone(),
    };
    let init = init.compute(&y, model)?;
    Ok((Sample { truth, y, init }, clean))
}

/// Builds the model and draws `train_count + test_count` samples.
pub fn synthesize(problem: &ProblemConfig) -> Result<SyntheticProblem> {
    problem.validate()?;
    let model = problem.model.build()?;
    let draw = |range: std::ops::Range<usize>| -> Result<Vec<Sample>> {
        range
            .map(|j| {
                synthesize_sample(&model, problem.seed, j, problem.snr_db, problem.init)
                    .map(|(s, _)| s)
            })
            .collect()
    };
    let train = Dataset::new(draw(0..problem.train_count)?)?;
    let test = if problem.test_count > 0 {
        Some(Dataset::new(draw(
            problem.train_count..problem.train_count + problem.test_count,
        )?)?)
    } else {
        None
    };
    Ok(SyntheticProblem { model, train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub truth: String,
    pub init: String,
    pub clean: Vec<String>,
    pub noisy: Vec<String>,
    pub realized_snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub count: usize,
    /// Requested input SNR; `null` for noiseless data.
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub init: InitKind,
    pub samples: Vec<SampleEntry>,
    /// SHA-256 of every data file, keyed by path relative to the dataset
    /// directory.
    pub checksums: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `count` phantoms with clean and noisy measurements (one tensor per
/// block), initializations and a manifest under `out`.
pub fn gen_data(
    model_cfg: &ModelConfig,
    count: usize,
    snr_db: Option<f64>,
    seed: u64,
    init: InitKind,
    out: &Path,
) -> Result<Manifest> {
    model_cfg.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("count must be >= 1".into()));
    }
    let snr_db = snr_db.filter(|s| s.is_finite());
    let model = model_cfg.build()?;
    let mut samples = Vec::with_capacity(count);
    let mut checksums = BTreeMap::new();
    let mut save = |rel: String, t: &Tensor| -> Result<String> {
        let path = out.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        t.save(&path)?;
        checksums.insert(rel.clone(), sha256_file(&path)?);
        let header = crate::tensor::header_path(Path::new(&rel));
        let header = header.to_string_lossy().into_owned();
        checksums.insert(header.clone(), sha256_file(&out.join(&header))?);
        Ok(rel)
    };
    for j in 0..count {
        let (sample, clean) = synthesize_sample(&model, seed, j, snr_db, init)?;
        let id = format!("{j:04}");
        let dir = format!("samples/{id}");
        let truth = save(format!("{dir}/truth.bin"), &sample.truth)?;
        let init_path = save(format!("{dir}/init.bin"), &sample.init)?;
        let mut clean_paths = Vec::new();
        let mut noisy_paths = Vec::new();
        for (i, (c, n)) in clean.blocks.iter().zip(&sample.y.blocks).enumerate() {
            clean_paths.push(save(format!("{dir}/clean/y_{i:03}.bin"), c)?);
            noisy_paths.push(save(format!("{dir}/noisy/y_{i:03}.bin"), n)?);
        }
        let realized_snr_db = snr_db.map(|_| {
            let e = sample.y.sub(&clean).expect("matching blocks");
            20.0 * (clean.norm() / e.norm()).log10()
        });
        samples.push(SampleEntry {
            id,
            truth,
            init: init_path,
            clean: clean_paths,
            noisy: noisy_paths,
            realized_snr_db,
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        model: model_cfg.clone(),
        count,
        snr_db,
        seed,
        init,
        samples,
        checksums,
    };
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidArgument(format!(
            "{}: unsupported schema_version {}",
            path.display(),
            manifest.schema_version
        )));
    }
    manifest.model.validate()?;
    Ok(manifest)
}

pub struct LoadedData {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub model: ForwardModel,
    pub dataset: Dataset,
}

impl LoadedData {
    pub fn ids(&self) -> Vec<String> {
        self.manifest.samples.iter().map(|s| s.id.clone()).collect()
    }
}

/// Loads a directory written by [`gen_data`], verifying checksums.
pub fn load_dataset(dir: &Path) -> Result<LoadedData> {
    let manifest = read_manifest(dir)?;
    for (rel, sum) in &manifest.checksums {
        if &sha256_file(&dir.join(rel))? != sum {
            return Err(Error::InvalidArgument(format!(
                "checksum mismatch for {}",
                dir.join(rel).display()
            )));
        }
    }
    let model = manifest.model.build()?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let blocks = entry
            .noisy
            .iter()
            .map(|p| Tensor::load(dir.join(p)))
            .collect::<Result<Vec<_>>>()?;
        let y = MeasurementSet {
            blocks,
            noise: NoiseInfo {
                snr_db: manifest.snr_db,
                seed: Some(manifest.seed),
            },
        };
        samples.push(Sample {
            truth: Tensor::load(dir.join(&entry.truth))?,
            y,
            init: Tensor::load(dir.join(&entry.init))?,
        });
    }
    Ok(LoadedData {
        dir: dir.to_path_buf(),
        manifest,
        model,
        dataset: Dataset::new(samples)?,
    })
}
