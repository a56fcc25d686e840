use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use unfold_sgd::baselines::{red_fixed_point, tv_apgm, Denoiser, RedConfig, TvConfig};
use unfold_sgd::experiment::{
    bench, gen_data, load_dataset, synthesize, BenchConfig, BenchRow, ExperimentConfig, InitKind,
    LoadedData,
};
use unfold_sgd::forward::{bp_init, fbp_init, ForwardModel, ModelConfig};
use unfold_sgd::metrics::MetricReport;
use unfold_sgd::theory::{
    check_phi_unbiasedness, check_training_gradient_unbiasedness, check_variance_scaling,
    gradient_fixture, theorem1_sweep, TheoryConfig,
};
use unfold_sgd::training::{
    pretrain_artifact_removal, train_unfolded, Checkpoint, Dataset, TrainConfig,
};
use unfold_sgd::unfold::{sgdnet_forward, ured_forward, DcMode, PriorNet, UnfoldConfig};
use unfold_sgd::Error;

const THREADS_ENV: &str = "UNFOLD_SGD_THREADS";

#[derive(Parser)]
#[command(name = "unfold-sgd", version, about = "Stochastic deep unfolding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize phantoms, measurements and initializations.
    GenData(GenDataArgs),
    /// End-to-end training of the unfolded network.
    Train(TrainArgs),
    /// Warm-up training of the artifact-removal network alone.
    Pretrain(TrainArgs),
    /// Reconstruct a dataset and score the results.
    Reconstruct(ReconstructArgs),
    /// Empirical checks of the training theory.
    Theory(TheoryArgs),
    /// Wall-clock of forward passes and training epochs per minibatch size.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Radon,
    Conv,
}

#[derive(clap::Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    size: usize,
    /// Views for radon models, filters for conv models.
    #[arg(long)]
    components: usize,
    #[arg(long)]
    count: usize,
    /// Input SNR in dB; `inf` for noiseless measurements.
    #[arg(long, default_value = "inf")]
    snr_db: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    init: InitArg,
    /// Rays per detector bin of radon models.
    #[arg(long, default_value_t = 1)]
    supersample: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Auto,
    Bp,
    Fbp,
}

impl From<InitArg> for InitKind {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Auto => InitKind::Auto,
            InitArg::Bp => InitKind::Bp,
            InitArg::Fbp => InitKind::Fbp,
        }
    }
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a snapshot directory written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Sgdnet,
    Ured,
    Tv,
    Red,
    Fbp,
    Bp,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Sgdnet => "sgdnet",
            Method::Ured => "ured",
            Method::Tv => "tv",
            Method::Red => "red",
            Method::Fbp => "fbp",
            Method::Bp => "bp",
        }
    }
}

#[derive(clap::Args)]
struct ReconstructArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Checkpoint directory (sgdnet, ured and red).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Minibatch size used by sgdnet at test time (defaults to the trained one).
    #[arg(long = "test-B")]
    test_b: Option<usize>,
    /// Run sgdnet with full-batch data consistency.
    #[arg(long)]
    full_batch: bool,
    /// Regularization weight of tv and red.
    #[arg(long, default_value_t = 1e-2)]
    tau: f64,
    #[arg(long, default_value_t = 240)]
    iterations: usize,
    /// Seed of the sgdnet minibatch draws (defaults to the trained one).
    #[arg(long)]
    seed: Option<u64>,
    /// Dynamic range used by SSIM.
    #[arg(long, default_value_t = 1.0)]
    dynamic_range: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Unbiasedness,
    Variance,
    Assumption3,
    Theorem1,
}

#[derive(clap::Args)]
struct TheoryArgs {
    #[arg(long, value_enum)]
    check: Check,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for CSV outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    minibatch_sizes: Option<Vec<usize>>,
    #[arg(long)]
    repeats: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }

    fn tolerance(message: impl Into<String>) -> Self {
        Self::new(6, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Csv(_) => 3,
            Error::Divergence { .. } => 4,
            Error::CheckpointMismatch(_) => 5,
            _ => 2,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a, false),
        Command::Pretrain(a) => cmd_train(a, true),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Theory(a) => cmd_theory(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(3, format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable report")
}

fn worker_count(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0);
    let jobs = requested.max(1);
    cap.map_or(jobs, |c| jobs.min(c))
}

fn cmd_gen_data(a: GenDataArgs) -> CliResult {
    if a.snr_db.is_nan() {
        return Err(Failure::usage("--snr-db must be a number or inf"));
    }
    let model = match a.kind {
        Kind::Radon => ModelConfig::Radon {
            size: a.size,
            views: a.components,
            detectors: None,
            supersample: a.supersample,
            pixel_size: 1.0,
            angle_jitter_deg: None,
            seed: a.seed,
        },
        Kind::Conv => ModelConfig::Conv {
            size: a.size,
            components: a.components,
            seed: a.seed,
        },
    };
    let snr = Some(a.snr_db).filter(|s| s.is_finite());
    let manifest = gen_data(&model, a.count, snr, a.seed, a.init.into(), &a.out)?;
    println!(
        "wrote {} samples ({} components) to {}",
        manifest.count,
        model.components(),
        a.out.display()
    );
    Ok(())
}

struct TrainData {
    model: ForwardModel,
    dataset: Dataset,
}

fn training_data(cfg: &ExperimentConfig) -> CliResult<TrainData> {
    if let Some(problem) = &cfg.problem {
        let p = synthesize(problem)?;
        return Ok(TrainData {
            model: p.model,
            dataset: p.train,
        });
    }
    let dir = cfg.data.as_ref().expect("validated config");
    let LoadedData { model, dataset, .. } = load_dataset(dir)?;
    Ok(TrainData { model, dataset })
}

fn initial_net(cfg: &ExperimentConfig) -> CliResult<PriorNet> {
    match &cfg.warm_start {
        Some(dir) => {
            let warm = Checkpoint::load(dir)?;
            if warm.net.spec() != cfg.network {
                return Err(Failure::new(
                    5,
                    format!(
                        "warm start {} has layer spec {:?}, config asks for {:?}",
                        dir.display(),
                        warm.net.spec(),
                        cfg.network
                    ),
                ));
            }
            let mut net = warm.net;
            net.set_tau(cfg.unfold.tau_init);
            Ok(net)
        }
        None => Ok(PriorNet::random(cfg.network, cfg.unfold.tau_init, cfg.network_seed)),
    }
}

fn cmd_train(a: TrainArgs, pretrain: bool) -> CliResult {
    let cfg = ExperimentConfig::from_json(&read_text(&a.config)?)?;
    let data = training_data(&cfg)?;
    let ucfg = cfg.unfold.to_config(data.model.num_components())?;
    let train_cfg: &TrainConfig = if pretrain {
        cfg.pretrain.as_ref().unwrap_or(&cfg.train)
    } else {
        &cfg.train
    };

    let start = match &a.resume {
        Some(dir) => {
            let ck = Checkpoint::load(dir)?;
            if ck.net.spec() != cfg.network {
                return Err(Failure::new(5, "snapshot layer spec differs from the config"));
            }
            if !pretrain && ck.unfold.as_ref().is_some_and(|u| *u != ucfg) {
                return Err(Failure::new(5, "snapshot unfold settings differ from the config"));
            }
            ck
        }
        None => {
            let ck = Checkpoint::initial(initial_net(&cfg)?, train_cfg.seed);
            if pretrain {
                ck
            } else {
                ck.with_unfold(ucfg.clone())
            }
        }
    };

    let snapshots = a.out.join("snapshots");
    let mut observer = |ck: &Checkpoint| ck.save(snapshots.join(format!("iter_{:08}", ck.iteration)));
    let result = if pretrain {
        pretrain_artifact_removal(&data.dataset, start, train_cfg, &mut observer)
    } else {
        train_unfolded(&data.dataset, &data.model, start, &ucfg, train_cfg, &mut observer)
    };
    match result {
        Ok((ck, trace)) => {
            ck.save(&a.out)?;
            trace.save_csv(a.out.join("trace.csv"))?;
            println!(
                "{} finished: {} iterations, last loss {}, tau {:.6}",
                if pretrain { "pretrain" } else { "train" },
                ck.iteration,
                ck.last_loss.map_or("n/a".into(), |l| format!("{l:.6e}")),
                ck.net.tau()
            );
            Ok(())
        }
        Err(Error::Divergence {
            iteration,
            last_finite_loss,
            checkpoint,
        }) => {
            checkpoint.save(a.out.join("last_good"))?;
            Err(Failure::new(
                4,
                format!(
                    "training diverged at iteration {iteration}; last finite loss {last_finite_loss:e}; \
                     last good checkpoint in {}",
                    a.out.join("last_good").display()
                ),
            ))
        }
        Err(e) => Err(e.into()),
    }
}

fn reconstruct_config(a: &ReconstructArgs, ck: &Checkpoint, components: usize) -> CliResult<UnfoldConfig> {
    let trained = ck
        .unfold
        .clone()
        .ok_or_else(|| Failure::new(5, "checkpoint has no unfold settings (pretrain checkpoint?)"))?;
    let mut cfg = match a.method {
        Method::Ured => trained.into_full_batch(components),
        _ if a.full_batch => UnfoldConfig {
            mode: DcMode::FullBatch,
            minibatch: components,
            ..trained
        },
        _ => {
            let b = a.test_b.unwrap_or(trained.minibatch);
            UnfoldConfig {
                mode: DcMode::Stochastic,
                minibatch: b,
                ..trained
            }
        }
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate(components)
        .map_err(|e| Failure::new(5, format!("checkpoint does not fit the data: {e}")))?;
    Ok(cfg)
}

fn cmd_reconstruct(a: ReconstructArgs) -> CliResult {
    let needs_ckpt = matches!(a.method, Method::Sgdnet | Method::Ured | Method::Red);
    match (&a.ckpt, needs_ckpt) {
        (None, true) => {
            return Err(Failure::new(5, format!("--method {} needs --ckpt", a.method.name())))
        }
        (Some(_), false) => {
            return Err(Failure::new(5, format!("--method {} takes no --ckpt", a.method.name())))
        }
        _ => {}
    }
    if a.test_b.is_some() && a.method != Method::Sgdnet {
        return Err(Failure::usage("--test-B only applies to --method sgdnet"));
    }
    let data = load_dataset(&a.input)?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let model = &data.model;
    let ck = a.ckpt.as_ref().map(Checkpoint::load).transpose()?;
    let ucfg = match (&ck, a.method) {
        (Some(ck), Method::Sgdnet | Method::Ured) => Some(reconstruct_config(&a, ck, model.num_components())?),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ucfg.as_ref().map_or(0, |c| c.seed));

    let mut report = MetricReport::default();
    for (id, s) in data.ids().iter().zip(data.dataset.samples()) {
        let image = match a.method {
            Method::Bp => bp_init(&s.y, model)?,
            Method::Fbp => fbp_init(&s.y, model)?,
            Method::Sgdnet => {
                let net = &ck.as_ref().expect("checked").net;
                let cfg = ucfg.as_ref().expect("checked");
                sgdnet_forward(&s.init, &s.y, model, net, cfg, &mut rng)?.image().clone()
            }
            Method::Ured => {
                let net = &ck.as_ref().expect("checked").net;
                ured_forward(&s.init, &s.y, model, net, ucfg.as_ref().expect("checked"))?.image().clone()
            }
            Method::Tv => {
                let cfg = TvConfig {
                    iterations: a.iterations,
                    ..TvConfig::new(a.tau)
                };
                tv_apgm(&s.y, model, &cfg, Some(&s.init))?.image
            }
            Method::Red => {
                let cfg = RedConfig {
                    iterations: a.iterations,
                    ..RedConfig::new(a.tau)
                };
                let den = Denoiser::Network(ck.as_ref().expect("checked").net.clone());
                red_fixed_point(&s.y, model, &s.init, &den, &cfg)?.image
            }
        };
        image.save(a.out.join(format!("{id}.bin")))?;
        report.push(id.clone(), a.method.name(), &image, &s.truth, a.dynamic_range)?;
    }
    report.save_csv(a.out.join("metrics.csv"))?;
    if let (Some(snr), Some(ssim)) = (report.snr_summary(a.method.name()), report.ssim_summary(a.method.name())) {
        println!(
            "{}: {} images, SNR mean {:.3} dB (median {:.3}), SSIM mean {:.4}",
            a.method.name(),
            report.rows.len(),
            snr.mean,
            snr.median,
            ssim.mean
        );
    }
    Ok(())
}

fn theory_config(path: Option<&PathBuf>) -> CliResult<TheoryConfig> {
    match path {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| Failure::usage(format!("{}: {e}", p.display()))),
        None => Ok(TheoryConfig::default()),
    }
}

fn cmd_theory(a: TheoryArgs) -> CliResult {
    let cfg = theory_config(a.config.as_ref())?;
    let out = a.out.as_deref();
    let (passed, json) = match a.check {
        Check::Unbiasedness => {
            let (model, y, probes) = gradient_fixture(&cfg.problem, cfg.probes)?;
            let r = check_phi_unbiasedness(&model, &y, &probes)?;
            (r.passed, to_json(&r))
        }
        Check::Variance => {
            let (model, y, probes) = gradient_fixture(&cfg.problem, cfg.probes)?;
            let r = check_variance_scaling(
                &model,
                &y,
                &probes,
                &cfg.variance_minibatch_sizes,
                cfg.draws,
                cfg.root_seed,
            )?;
            (r.passed, to_json(&r))
        }
        Check::Assumption3 => {
            let setup = cfg.problem.setup()?;
            let r = check_training_gradient_unbiasedness(
                &setup.dataset,
                &setup.model,
                &setup.net,
                &cfg.problem.full_batch(),
            )?;
            (r.passed, to_json(&r))
        }
        Check::Theorem1 => {
            let s = theorem1_sweep(
                &cfg.problem,
                &cfg.sweep_minibatch_sizes,
                &cfg.sweep_iterations,
                cfg.seeds,
                cfg.root_seed,
                worker_count(a.jobs),
            )?;
            if let Some(dir) = out {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
                let path = dir.join("summary.csv");
                let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
                s.write_summary_csv(f)?;
                for t in &s.traces {
                    let path = dir.join(format!("trace_B{}_K{}_s{}.csv", t.minibatch, t.iterations, t.seed));
                    let f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
                    t.write_csv(f)?;
                }
            }
            let passed = s.k_trend.iter().all(|r| r.passed) && s.b_trend.iter().all(|r| r.passed);
            #[derive(Serialize)]
            struct Trends<'a> {
                k_trend: &'a [unfold_sgd::theory::KTrendRow],
                b_trend: &'a [unfold_sgd::theory::BTrendRow],
                b_trend_fraction: f64,
                diverged_runs: usize,
            }
            let trends = Trends {
                k_trend: &s.k_trend,
                b_trend: &s.b_trend,
                b_trend_fraction: s.b_trend_fraction,
                diverged_runs: s.traces.iter().filter(|t| t.diverged.is_some()).count(),
            };
            (passed, to_json(&trends))
        }
    };
    println!("{json}");
    if let Some(dir) = out {
        write_text(&dir.join("report.json"), &json)?;
    }
    if passed {
        Ok(())
    } else {
        Err(Failure::tolerance("theory check failed its tolerance"))
    }
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    let text = read_text(&a.config)?;
    let mut cfg: BenchConfig =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", a.config.display())))?;
    if let Some(sizes) = a.minibatch_sizes {
        cfg.minibatch_sizes = sizes;
    }
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    let rows = bench(&cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
        w.write_record(BenchRow::HEADER)?;
        for r in &rows {
            w.write_record(r.record())?;
        }
        Ok(())
    };
    write(&mut w).map_err(|e| Failure::new(3, e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| Failure::new(3, e.to_string()))?;
    let text = String::from_utf8(bytes).expect("csv is utf-8");
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
