use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{derive_seed, synthesize, InitKind, ProblemConfig};
use crate::forward::{ForwardModel, ModelConfig};
use crate::metrics::Summary;
use crate::training::{train_unfolded, Checkpoint, Dataset, Schedule, TrainConfig};
use crate::unfold::{LayerSpec, PriorNet, UnfoldConfig};

/// The desk-scale problem on which the bound's `K` and `B` dependence is
/// probed. Training uses plain SGD with `η = 1/(L·√K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Theorem1Problem {
    pub size: usize,
    pub components: usize,
    pub samples: usize,
    pub steps: usize,
    pub gamma: f64,
    pub tau_init: f64,
    pub hidden: usize,
    pub snr_db: Option<f64>,
    pub seed: u64,
    /// The constant `L` of the step-size rule.
    pub lipschitz: f64,
    /// Iterations between recorded `‖∇F(θ^k; φ)‖²` values.
    pub trace_period: usize,
}

impl Default for Theorem1Problem {
    fn default() -> Self {
        Self {
            size: 16,
            components: 20,
            samples: 4,
            steps: 4,
            gamma: 0.05,
            tau_init: 1.0,
            hidden: 4,
            snr_db: Some(30.0),
            seed: 0,
            lipschitz: 10.0,
            trace_period: 10,
        }
    }
}

pub struct Theorem1Setup {
    pub model: ForwardModel,
    pub dataset: Dataset,
    /// Common starting point `θ⁰` of every run.
    pub net: PriorNet,
}

impl Theorem1Problem {
    pub fn problem_config(&self) -> ProblemConfig {
        ProblemConfig {
            model: ModelConfig::Radon {
                size: self.size,
                views: self.components,
                detectors: None,
                supersample: 1,
                pixel_size: 1.0,
                angle_jitter_deg: None,
                seed: self.seed,
            },
            train_count: self.samples,
            test_count: 0,
            snr_db: self.snr_db,
            seed: self.seed,
            init: InitKind::Fbp,
        }
    }

    pub fn setup(&self) -> Result<Theorem1Setup> {
        if self.steps == 0 || !(self.gamma > 0.0) || !(self.lipschitz > 0.0) || self.trace_period == 0
        {
            return Err(Error::InvalidArgument(format!("invalid theorem problem {self:?}")));
        }
        let synth = synthesize(&self.problem_config())?;
        let spec = LayerSpec {
            hidden: self.hidden,
            kernel: 3,
        };
        spec.validate()?;
        Ok(Theorem1Setup {
            model: synth.model,
            dataset: synth.train,
            net: PriorNet::random(spec, self.tau_init, derive_seed(self.seed, &[7])),
        })
    }

    pub fn full_batch(&self) -> UnfoldConfig {
        UnfoldConfig::full_batch(self.steps, self.gamma, self.components)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Trace {
    pub minibatch: usize,
    pub iterations: usize,
    pub seed: u64,
    pub run_seed: u64,
    pub eta: f64,
    /// `(k, ‖∇F(θ^k; φ)‖²)`.
    pub grad_norms: Vec<(usize, f64)>,
    pub min_so_far: Vec<f64>,
    pub min_grad_norm_sq: f64,
    /// Mean of the last 10% of recorded values.
    pub tail_floor: f64,
    /// Divergence message; such runs are excluded from summaries.
    pub diverged: Option<String>,
    pub wallclock_s: f64,
}

/// Running minimum of `values`.
pub fn min_so_far(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(f64::INFINITY, |m, &v| {
            *m = m.min(v);
            Some(*m)
        })
        .collect()
}

/// Mean of the last `ceil(10%)` entries.
pub fn tail_floor(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let n = values.len().div_ceil(10);
    values[values.len() - n..].iter().sum::<f64>() / n as f64
}

/// Seed of the run `(B, K, seed)` under `root`.
pub fn run_seed(root: u64, minibatch: usize, iterations: usize, seed: u64) -> u64 {
    derive_seed(root, &[minibatch as u64, iterations as u64, seed])
}

/// One SGD training run of `K` iterations at minibatch size `B`.
pub fn theorem1_run(
    problem: &Theorem1Problem,
    setup: &Theorem1Setup,
    minibatch: usize,
    iterations: usize,
    seed: u64,
    root_seed: u64,
) -> Result<Theorem1Trace> {
    let started = Instant::now();
    let rs = run_seed(root_seed, minibatch, iterations, seed);
    let ucfg = UnfoldConfig::stochastic(problem.steps, problem.gamma, minibatch, rs);
    ucfg.validate(setup.model.num_components())?;
    let schedule = Schedule::InverseSqrt {
        lipschitz: problem.lipschitz,
    };
    let eta = schedule.eta(0, iterations);
    let mut tcfg = TrainConfig::sgd(1, schedule, rs);
    tcfg.iterations_per_epoch = Some(iterations);
    tcfg.grad_norm_period = problem.trace_period;
    let start = Checkpoint::initial(setup.net.clone(), rs);
    let (grad_norms, diverged) =
        match train_unfolded(&setup.dataset, &setup.model, start, &ucfg, &tcfg, &mut ()) {
            Ok((_, trace)) => (trace.grad_norms(), None),
            Err(e @ Error::Divergence { .. }) => (Vec::new(), Some(e.to_string())),
            Err(e) => return Err(e),
        };
    let values: Vec<f64> = grad_norms.iter().map(|g| g.1).collect();
    let mins = min_so_far(&values);
    Ok(Theorem1Trace {
        minibatch,
        iterations,
        seed,
        run_seed: rs,
        eta,
        min_grad_norm_sq: mins.last().copied().unwrap_or(f64::NAN),
        tail_floor: tail_floor(&values),
        min_so_far: mins,
        grad_norms,
        diverged,
        wallclock_s: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KTrendRow {
    pub minibatch: usize,
    pub k_small: usize,
    pub k_large: usize,
    /// Seed-averaged `min_k ‖∇F‖²`.
    pub min_small: f64,
    pub min_large: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BTrendRow {
    pub iterations: usize,
    pub b_small: usize,
    pub b_large: usize,
    /// Seed-averaged tail floors.
    pub floor_small: f64,
    pub floor_large: f64,
    pub passed: bool,
}

/// Allowed relative increase of the floor when `B` grows.
pub const FLOOR_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub traces: Vec<Theorem1Trace>,
    pub k_trend: Vec<KTrendRow>,
    pub b_trend: Vec<BTrendRow>,
    /// Fraction of passed `B` comparisons.
    pub b_trend_fraction: f64,
}

fn seed_mean(traces: &[Theorem1Trace], b: usize, k: usize, f: impl Fn(&Theorem1Trace) -> f64) -> f64 {
    let v: Vec<f64> = traces
        .iter()
        .filter(|t| t.minibatch == b && t.iterations == k && t.diverged.is_none())
        .map(f)
        .collect();
    Summary::of(&v).map_or(f64::NAN, |s| s.mean)
}

/// Runs every `(B, K, seed)` combination, on up to `jobs` threads, and
/// summarizes the `K` trend (smallest vs largest `K`, per `B`) and the `B`
/// trend (consecutive sizes, at every `K`).
pub fn theorem1_sweep(
    problem: &Theorem1Problem,
    minibatch_sizes: &[usize],
    iterations: &[usize],
    seeds: usize,
    root_seed: u64,
    jobs: usize,
) -> Result<SweepSummary> {
    if minibatch_sizes.is_empty() || iterations.is_empty() || seeds == 0 {
        return Err(Error::InvalidArgument("empty sweep".into()));
    }
    let setup = problem.setup()?;
    let mut bs = minibatch_sizes.to_vec();
    bs.sort_unstable();
    bs.dedup();
    let mut ks = iterations.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut runs = Vec::new();
    for &b in &bs {
        for &k in &ks {
            for s in 0..seeds as u64 {
                runs.push((b, k, s));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let traces = pool.install(|| {
        runs.par_iter()
            .map(|&(b, k, s)| theorem1_run(problem, &setup, b, k, s, root_seed))
            .collect::<Result<Vec<_>>>()
    })?;

    let (k_small, k_large) = (ks[0], *ks.last().expect("non-empty"));
    let k_trend = bs
        .iter()
        .map(|&b| {
            let min_small = seed_mean(&traces, b, k_small, |t| t.min_grad_norm_sq);
            let min_large = seed_mean(&traces, b, k_large, |t| t.min_grad_norm_sq);
            KTrendRow {
                minibatch: b,
                k_small,
                k_large,
                min_small,
                min_large,
                passed: min_large <= min_small,
            }
        })
        .collect();
    let mut b_trend = Vec::new();
    for &k in &ks {
        for w in bs.windows(2) {
            let floor_small = seed_mean(&traces, w[0], k, |t| t.tail_floor);
            let floor_large = seed_mean(&traces, w[1], k, |t| t.tail_floor);
            b_trend.push(BTrendRow {
                iterations: k,
                b_small: w[0],
                b_large: w[1],
                floor_small,
                floor_large,
                passed: floor_large <= (1.0 + FLOOR_TOLERANCE) * floor_small,
            });
        }
    }
    let b_trend_fraction = if b_trend.is_empty() {
        1.0
    } else {
        b_trend.iter().filter(|r| r.passed).count() as f64 / b_trend.len() as f64
    };
    Ok(SweepSummary {
        traces,
        k_trend,
        b_trend,
        b_trend_fraction,
    })
}

impl SweepSummary {
    /// One row per run: `B, K, seed, min_grad_norm_sq, tail_floor,
    /// wallclock_s` (diverged runs have empty values).
    pub fn write_summary_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["B", "K", "seed", "min_grad_norm_sq", "tail_floor", "wallclock_s"])?;
        for t in &self.traces {
            let (m, f) = if t.diverged.is_some() {
                (String::new(), String::new())
            } else {
                (format!("{:e}", t.min_grad_norm_sq), format!("{:e}", t.tail_floor))
            };
            w.write_record([
                t.minibatch.to_string(),
                t.iterations.to_string(),
                t.seed.to_string(),
                m,
                f,
                format!("{:.3}", t.wallclock_s),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<summary>", e))?;
        Ok(())
    }
}

impl Theorem1Trace {
    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iteration", "grad_norm_sq", "min_so_far"])?;
        for ((k, g), m) in self.grad_norms.iter().zip(&self.min_so_far) {
            w.write_record([k.to_string(), format!("{g:e}"), format!("{m:e}")])?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }
}
