use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use chromalab_core::dataset::Dataset;
use chromalab_core::ppm::{read_ppm, write_ppm};
use chromalab_core::priors_file::{load_priors, save_priors};
use chromalab_core::quantize::{build_gamut, DEFAULT_GRID_STEP, DEFAULT_TEMPERATURE};
use chromalab_core::rebalance::{PriorWeights, DEFAULT_LAMBDA, DEFAULT_PRIOR_SIGMA};
use chromalab_pipeline::arch::{self, ArchitectureConfig};
use chromalab_pipeline::checkpoint::Checkpoint;
use chromalab_pipeline::eval::{evaluate, Predictor};
use chromalab_pipeline::fixture;
use chromalab_pipeline::infer::Colorizer;
use chromalab_pipeline::train::{format_log_entry, LOG_HEADER};
use chromalab_pipeline::{TrainConfig, Trainer, Variant};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] chromalab_core::Error),
    #[error(transparent)]
    Pipeline(#[from] chromalab_pipeline::Error),
    #[error(transparent)]
    Study(#[from] chromalab_study::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_)
            | CliError::Core(chromalab_core::Error::InvalidParameter { .. })
            | CliError::Pipeline(chromalab_pipeline::Error::Config(_) | chromalab_pipeline::Error::Arch(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Parser)]
#[command(name = "chromalab", version, about = "Automatic image colorization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the in-gamut ab bins: `q <count>`, then `<index> <a> <b>` per bin.
    Gamut {
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
    },
    /// Print an architecture table with its derived columns.
    ShowArch {
        /// `desk`, `full`, or a path to an architecture file.
        #[arg(long, default_value = "desk")]
        arch: String,
    },
    /// Write the synthetic training scenes as PPM files.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = fixture::DEFAULT_COUNT)]
        count: usize,
        #[arg(long, default_value_t = fixture::DEFAULT_SIZE)]
        size: usize,
        #[arg(long, default_value_t = fixture::DEFAULT_SEED)]
        seed: u64,
        /// Leave out the per-bin color swatches.
        #[arg(long)]
        no_swatches: bool,
    },
    /// Estimate the color prior of a dataset and write rebalancing weights.
    ComputePriors {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_PRIOR_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
        grid_step: f64,
        /// Images are fitted to size x size before counting.
        #[arg(long, default_value_t = fixture::DEFAULT_SIZE)]
        size: usize,
    },
    Train(TrainArgs),
    /// Colorize one PPM image.
    Colorize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(short = 't', long, default_value_t = DEFAULT_TEMPERATURE)]
        temperature: f64,
    },
    /// Score predictions on a dataset; prints a JSON report.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = PredictorKind::Model)]
        predictor: PredictorKind,
        /// Required for `--predictor model`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Enables the class-balanced AuC.
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(short = 't', long, default_value_t = DEFAULT_TEMPERATURE)]
        temperature: f64,
        /// Defaults to the checkpoint's input size, or 64.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the predicted per-bin probability maps of one image as JSON.
    DumpDistributions {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Keep every n-th bin.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Run the perceptual study server until interrupted.
    ServeStudy {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Fixes session ids and trial orders; otherwise they are random.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorKind {
    Model,
    Gray,
    Truth,
}

/// Train a colorization network.
#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint written at the end (and every --checkpoint-every steps).
    #[arg(long)]
    out: PathBuf,
    /// Loss log; appended to when resuming.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue a run; the configuration comes from the checkpoint.
    #[arg(long, conflicts_with_all = ["variant", "arch", "config", "source", "lr", "batch_size", "seed", "lambda"])]
    resume: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long)]
    priors: Option<PathBuf>,
    /// `desk`, `full`, or a path to an architecture file.
    #[arg(long)]
    arch: Option<String>,
    /// Training configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trunk source for l2_finetune.
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Initial learning rate; later stages are lr/3 and lr/10.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Shuffle seed of the dataset.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: chromalab_pipeline::Error| e.to_string())
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(usage(msg()))
    }
}

fn check_temperature(t: f64) -> Result<()> {
    check(t > 0.0 && t <= 1.0, || format!("--temperature {t} must be in (0, 1]"))
}

fn load_arch(spec: &str) -> Result<ArchitectureConfig> {
    Ok(match spec {
        "desk" => arch::desk_scale(),
        "full" => arch::full_scale(),
        path => {
            let path = Path::new(path);
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            ArchitectureConfig::parse(&text)?
        }
    })
}

fn cmd_gamut(grid_step: f64) -> Result<()> {
    check(grid_step > 0.0 && grid_step.is_finite(), || format!("--grid-step {grid_step} must be positive"))?;
    let bins = build_gamut(grid_step)?;
    let mut out = std::io::stdout().lock();
    let mut text = format!("q {}\n", bins.len());
    for (q, [a, b]) in bins.centers().iter().enumerate() {
        text.push_str(&format!("{q} {a} {b}\n"));
    }
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn cmd_show_arch(spec: &str) -> Result<()> {
    let mut a = load_arch(spec)?;
    a.declare_derived()?;
    print!("{}", a.to_text());
    Ok(())
}

fn cmd_make_fixture(out: &Path, count: usize, size: usize, seed: u64, no_swatches: bool) -> Result<()> {
    check(count > 0, || "--count must be positive".into())?;
    check(size >= 8, || format!("--size {size} must be at least 8"))?;
    let palette = if no_swatches { Vec::new() } else { fixture::gamut_palette(&build_gamut(DEFAULT_GRID_STEP)?) };
    let scenes = fixture::generate(count, size, seed, &palette);
    fixture::write_fixture(out, &scenes)?;
    log::info!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn cmd_compute_priors(dataset: &Path, out: &Path, lambda: f64, sigma: f64, grid_step: f64, size: usize) -> Result<()> {
    check((0.0..=1.0).contains(&lambda), || format!("--lambda {lambda} must be in [0, 1]"))?;
    check(sigma > 0.0 && sigma.is_finite(), || format!("--sigma {sigma} must be positive"))?;
    check(grid_step > 0.0 && grid_step.is_finite(), || format!("--grid-step {grid_step} must be positive"))?;
    check(size > 0, || "--size must be positive".into())?;
    let bins = build_gamut(grid_step)?;
    let ds = Dataset::load(dataset, size, 0)?;
    let labs = ds.images().iter().map(chromalab_core::colorspace::srgb_to_lab);
    let pw = PriorWeights::estimate(labs, &bins, lambda, sigma)?;
    save_priors(out, &pw)?;
    log::info!("priors over {} bins from {} images written to {}", pw.q(), ds.len(), out.display());
    Ok(())
}

fn load_priors_opt(path: Option<&Path>) -> Result<Option<PriorWeights>> {
    Ok(path.map(load_priors).transpose()?)
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(lr) = args.lr {
        check(lr > 0.0 && lr.is_finite(), || format!("--lr {lr} must be positive"))?;
        cfg = cfg.with_lr(lr);
    }
    if let Some(n) = args.iterations {
        cfg.iterations = n;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(l) = args.lambda {
        cfg.lambda = l;
    }
    cfg.validate()?;
    if cfg.variant == Variant::ClassRebal && args.priors.is_none() {
        return Err(usage("variant class_rebal requires --priors"));
    }
    if cfg.variant == Variant::L2Finetune && args.source.is_none() {
        return Err(usage("variant l2_finetune requires --source"));
    }
    Ok(cfg)
}

struct LossLog(Option<BufWriter<File>>);

impl LossLog {
    fn open(path: Option<&Path>, resume: bool) -> Result<Self> {
        let Some(path) = path else { return Ok(Self(None)) };
        let fresh = !resume || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(resume)
            .truncate(!resume)
            .open(path)
            .map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        if fresh {
            writeln!(w, "{LOG_HEADER}").map_err(io_err(path))?;
        }
        Ok(Self(Some(w)))
    }

    fn write(&mut self, line: &str) -> std::io::Result<()> {
        match &mut self.0 {
            Some(w) => writeln!(w, "{line}"),
            None => Ok(()),
        }
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.as_mut().map_or(Ok(()), |w| w.flush())
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    if let Some(every) = args.checkpoint_every {
        check(every > 0, || "--checkpoint-every must be positive".into())?;
    }
    let priors = load_priors_opt(args.priors.as_deref())?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let ds = Dataset::load(&args.dataset, ckpt.arch.input_size, args.data_seed)?;
            let mut t = Trainer::resume(ckpt, &ds, priors.as_ref())?;
            if let Some(n) = args.iterations {
                t.set_iterations(n);
            }
            t
        }
        None => {
            let cfg = train_config(args)?;
            let arch = load_arch(args.arch.as_deref().unwrap_or("desk"))?;
            let source = args.source.as_deref().map(Checkpoint::load).transpose()?.map(|c| c.model()).transpose()?;
            let ds = Dataset::load(&args.dataset, arch.input_size, args.data_seed)?;
            Trainer::new(cfg, &arch, &ds, priors.as_ref(), source.as_ref())?
        }
    };
    let log_path = args.log.as_deref();
    let mut log = LossLog::open(log_path, args.resume.is_some())?;
    let log_err = |e| CliError::Io { path: log_path.unwrap_or(Path::new("<log>")).to_path_buf(), source: e };
    let every = args.checkpoint_every;
    let mut write_error = None;
    trainer.run(|t, e| {
        if let Err(err) = log.write(&format_log_entry(e)) {
            write_error.get_or_insert(err);
        }
        if e.iteration % 100 == 0 {
            log::info!("iteration {} loss {:.4} smoothed {:.4} lr {}", e.iteration, e.loss, e.smoothed, e.lr);
        }
        if every.is_some_and(|n| e.iteration % n == 0) {
            if let Err(err) = log.flush() {
                write_error.get_or_insert(err);
            }
            Checkpoint::capture(t).save(&args.out)?;
        }
        Ok(())
    })?;
    if let Some(e) = write_error {
        return Err(log_err(e));
    }
    log.flush().map_err(log_err)?;
    Checkpoint::capture(&trainer).save(&args.out)?;
    log::info!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn cmd_colorize(checkpoint: &Path, input: &Path, output: &Path, t: f64) -> Result<()> {
    check_temperature(t)?;
    let c = Colorizer::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let img = read_ppm(input)?;
    write_ppm(output, &c.colorize(&img, t)?)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    dataset: &Path,
    predictor: PredictorKind,
    checkpoint: Option<&Path>,
    priors: Option<&Path>,
    t: f64,
    size: Option<usize>,
    seed: u64,
) -> Result<()> {
    check_temperature(t)?;
    let colorizer = match (predictor, checkpoint) {
        (PredictorKind::Model, Some(path)) => Some(Colorizer::from_checkpoint(&Checkpoint::load(path)?)?),
        (PredictorKind::Model, None) => return Err(usage("--predictor model requires --checkpoint")),
        _ => None,
    };
    let size = size.unwrap_or_else(|| colorizer.as_ref().map_or(fixture::DEFAULT_SIZE, |c| c.model().input_size()));
    check(size > 0, || "--size must be positive".into())?;
    let priors = load_priors_opt(priors)?;
    let ds = Dataset::load(dataset, size, seed)?;
    let (name, p) = match (predictor, &colorizer) {
        (PredictorKind::Gray, _) => ("gray", Predictor::Gray),
        (PredictorKind::Truth, _) => ("truth", Predictor::Truth),
        (PredictorKind::Model, Some(c)) => ("model", Predictor::Model(c)),
        (PredictorKind::Model, None) => unreachable!("checked above"),
    };
    let r = evaluate(p, &ds, priors.as_ref(), t)?;
    let report = json!({
        "predictor": name,
        "temperature": t,
        "images": r.images,
        "pixels": r.pixels,
        "auc": r.auc,
        "auc_image_mean": r.auc_image_mean,
        "rebalanced_auc": r.rebalanced_auc,
        "mean_chroma": r.mean_chroma,
        "mean_chroma_truth": r.mean_chroma_truth,
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn cmd_dump_distributions(checkpoint: &Path, input: &Path, output: &Path, stride: usize) -> Result<()> {
    check(stride > 0, || "--stride must be at least 1".into())?;
    let c = Colorizer::from_checkpoint(&Checkpoint::load(checkpoint)?)?;
    let maps = c.dump_distributions(&read_ppm(input)?, stride)?;
    let doc = json!({
        "width": maps.width,
        "height": maps.height,
        "bins": maps.bins,
        "centers": maps.centers,
        "planes": maps.planes,
    });
    let text = serde_json::to_string(&doc).expect("maps serialize");
    std::fs::write(output, text).map_err(io_err(output))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutting down");
}

fn cmd_serve_study(results: &Path, manifest: &Path, host: &str, port: u16, seed: Option<u64>) -> Result<()> {
    let manifest = chromalab_study::Manifest::load(manifest).map_err(|e| match e {
        chromalab_study::Error::Manifest(m) => usage(format!("manifest: {m}")),
        other => other.into(),
    })?;
    let study = Arc::new(chromalab_study::Study::open(manifest, results, seed)?);
    let rt = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
    let addr = format!("{host}:{port}");
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(io_err(Path::new(&addr)))?;
        let local = listener.local_addr().map_err(io_err(Path::new(&addr)))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        chromalab_study::serve(listener, study, shutdown_signal())
            .await
            .map_err(io_err(Path::new(&addr)))
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gamut { grid_step } => cmd_gamut(grid_step),
        Command::ShowArch { arch } => cmd_show_arch(&arch),
        Command::MakeFixture { out, count, size, seed, no_swatches } => cmd_make_fixture(&out, count, size, seed, no_swatches),
        Command::ComputePriors { dataset, out, lambda, sigma, grid_step, size } => {
            cmd_compute_priors(&dataset, &out, lambda, sigma, grid_step, size)
        }
        Command::Train(args) => cmd_train(&args),
        Command::Colorize { checkpoint, input, output, temperature } => cmd_colorize(&checkpoint, &input, &output, temperature),
        Command::Evaluate { dataset, predictor, checkpoint, priors, temperature, size, seed } => {
            cmd_evaluate(&dataset, predictor, checkpoint.as_deref(), priors.as_deref(), temperature, size, seed)
        }
        Command::DumpDistributions { checkpoint, input, output, stride } => {
            cmd_dump_distributions(&checkpoint, &input, &output, stride)
        }
        Command::ServeStudy { results, manifest, port, host, seed } => cmd_serve_study(&results, &manifest, &host, port, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHROMALAB_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
