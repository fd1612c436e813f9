//! `rlff`: simulate, fit, match, export and evaluate refracted light-field
//! features.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rlff_core::calibrate::{calibrate, CALIBRATION_SEED, CALIBRATION_SIGMA_PIXELS, CALIBRATION_TRIALS};
use rlff_core::config::RunConfig;
use rlff_core::estimator::{extract_batch, interval_of_sturm};
use rlff_core::eval::evaluate;
use rlff_core::export::{export_frame, write_atomic, DescriptorStrategy, ExportMode, ExportSource};
use rlff_core::io::{format_jsonl, format_observations_csv, read_jsonl, read_observations_csv, read_scene, RlffRecord};
use rlff_core::oracle::{feature_seed, synth_observations};
use rlff_core::pipeline::{ingest_keypoints, run_pipeline};
use rlff_core::{Error, LfIntrinsics};

/// Environment variable read for the worker thread count.
const THREADS_ENV: &str = "RLFF_THREADS";

#[derive(Parser, Debug)]
#[command(name = "rlff", version, propagate_version = true, about = "Refracted light-field features")]
struct Cli {
    /// TOML or JSON run configuration; missing keys keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Intrinsics JSON (`M`, `D`, `Ni`, `Nj`, `Nk`, `Nl`); defaults to the
    /// built-in 13x13 reference camera.
    #[arg(long, global = true, value_name = "FILE")]
    intrinsics: Option<PathBuf>,

    /// Seed, overriding the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize observation CSV rows for every feature of a scene file.
    Simulate(SimulateArgs),
    /// Fit RLFFs to an observation CSV and write JSON lines.
    Fit(FitArgs),
    /// Match per-view keypoint files and extract RLFFs.
    Pipeline(PipelineArgs),
    /// Write RLFF characteristic points as 2D feature files.
    Export(ExportArgs),
    /// Compare RLFF JSON lines against a ground-truth scene.
    Eval(EvalArgs),
    /// Re-run the Monte-Carlo threshold calibration.
    Calibrate(CalibrateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// JSON array of records with `Px`, `Py`, `Pz1`, `Pz2`, `theta1`, `theta2`.
    #[arg(long)]
    scene: PathBuf,
    /// Observation noise, in pixels of the `u, v` plane.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// `feature_id,i,j,s,t,u,v` or `feature_id,i,j,k,l` CSV.
    #[arg(long)]
    obs: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// JSON lines of rejected features with their reason.
    #[arg(long)]
    rejected: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// Directory of `view_<i>_<j>.txt` keypoint files.
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    rejected: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Mono,
    Stereo,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Strategy {
    Identical,
    Bias,
    ExternalMatch,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// RLFF JSON lines from `fit` or `pipeline`.
    #[arg(long)]
    rlff: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Mono)]
    mode: Mode,
    /// Output root; files go to `mono/` or `stereo/` below it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "frame")]
    frame: String,
    /// Overrides the config's descriptor strategy.
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    /// Stereo baseline in meters, overriding the config.
    #[arg(long)]
    baseline: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    rlff: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long, default_value_t = CALIBRATION_TRIALS)]
    trials: usize,
    /// Noise in pixels.
    #[arg(long, default_value_t = CALIBRATION_SIGMA_PIXELS)]
    noise: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Data(Error::Config(_)) => 1,
            CliError::Data(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn emit(output: Option<&Path>, text: &str) -> CliResult<()> {
    match output {
        Some(p) => write_atomic(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RejectedLine<'a> {
    id: u64,
    reason: &'a str,
    detail: String,
}

fn emit_rejected(path: Option<&Path>, rejected: &[(u64, rlff_core::Rejection)]) -> CliResult<()> {
    for (id, why) in rejected {
        log::warn!("feature {id} rejected: {why}");
    }
    if let Some(p) = path {
        let lines: Vec<RejectedLine> =
            rejected.iter().map(|(id, why)| RejectedLine { id: *id, reason: why.reason(), detail: why.to_string() }).collect();
        write_atomic(p, &format_jsonl(&lines)?)?;
    }
    Ok(())
}

fn load_intrinsics(path: Option<&Path>) -> CliResult<LfIntrinsics> {
    Ok(match path {
        Some(p) => LfIntrinsics::load(p)?,
        None => LfIntrinsics::reference(),
    })
}

fn simulate(args: &SimulateArgs, cfg: &RunConfig, intr: &LfIntrinsics) -> CliResult<()> {
    if !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(CliError::Usage(format!("--noise must be >= 0, got {}", args.noise)));
    }
    let scene = read_scene(&args.scene)?;
    let sigma = args.noise * intr.pixel_pitch();
    let sets = scene
        .iter()
        .map(|(id, m)| synth_observations(m, intr, sigma, feature_seed(cfg.seed, *id), *id))
        .collect::<rlff_core::Result<Vec<_>>>()?;
    emit(args.output.as_deref(), &format_observations_csv(&sets))
}

fn fit(args: &FitArgs, cfg: &RunConfig, intr: &LfIntrinsics) -> CliResult<()> {
    let sets = read_observations_csv(&args.obs, intr)?;
    let results = extract_batch(&sets, intr.plane_separation(), &cfg.extract());
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (id, r) in results {
        match r {
            Ok(e) => records.push(RlffRecord::from(&e)),
            Err(why) => rejected.push((id, why)),
        }
    }
    log::info!("{} features fitted, {} rejected", records.len(), rejected.len());
    emit_rejected(args.rejected.as_deref(), &rejected)?;
    emit(args.output.as_deref(), &format_jsonl(&records)?)
}

fn pipeline(args: &PipelineArgs, cfg: &RunConfig, intr: &LfIntrinsics) -> CliResult<()> {
    let kps = ingest_keypoints(&args.keypoints, intr.dims(), cfg.root_sift)?;
    let out = run_pipeline(&kps, intr, cfg);
    let records: Vec<RlffRecord> = out.features.iter().map(RlffRecord::from).collect();
    log::info!("{} features extracted, {} rejected", records.len(), out.rejected.len());
    emit_rejected(args.rejected.as_deref(), &out.rejected)?;
    emit(args.output.as_deref(), &format_jsonl(&records)?)
}

fn export(args: &ExportArgs, cfg: &RunConfig, intr: &LfIntrinsics) -> CliResult<()> {
    let mode = match args.mode {
        Mode::Mono => ExportMode::Mono,
        Mode::Stereo => ExportMode::Stereo,
    };
    let mut ecfg = cfg.export(mode);
    if let Some(s) = args.strategy {
        ecfg.strategy = match s {
            Strategy::Identical => DescriptorStrategy::Identical,
            Strategy::Bias => DescriptorStrategy::DEFAULT_BIAS,
            Strategy::ExternalMatch => DescriptorStrategy::ExternalMatch,
        };
    }
    if let Some(b) = args.baseline {
        ecfg.baseline = Some(b);
    }
    if args.frame.is_empty() || args.frame.contains(['/', '\\']) {
        return Err(CliError::Usage(format!("invalid frame name `{}`", args.frame)));
    }
    let records: Vec<RlffRecord> = read_jsonl(&args.rlff)?;
    let sources: Vec<ExportSource> = records
        .iter()
        .map(|r| ExportSource {
            id: r.id,
            points: interval_of_sturm(&r.rlff, ecfg.lambertian_eps),
            descriptor: r.descriptor.clone().unwrap_or_else(|| vec![0.0; ecfg.descriptor_len]),
            scale: r.scale.unwrap_or(1.0),
            orientation: r.orientation.unwrap_or(0.0),
        })
        .collect();
    let index = export_frame(&sources, intr, &ecfg, &args.out, &args.frame)?;
    let mut text = serde_json::to_string(&index.stats).map_err(Error::from)?;
    text.push('\n');
    emit(None, &text)
}

fn eval(args: &EvalArgs, cfg: &RunConfig) -> CliResult<()> {
    let records: Vec<RlffRecord> = read_jsonl(&args.rlff)?;
    let scene = read_scene(&args.scene)?;
    let report = evaluate(&records, &scene, cfg.lambertian_eps);
    let mut text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    text.push('\n');
    emit(args.output.as_deref(), &text)
}

fn calibrate_cmd(args: &CalibrateArgs, seed: Option<u64>, intr: &LfIntrinsics) -> CliResult<()> {
    if args.trials == 0 || args.noise.is_nan() || args.noise <= 0.0 {
        return Err(CliError::Usage("--trials and --noise must be positive".into()));
    }
    let c = calibrate(intr, args.noise, args.trials, seed.unwrap_or(CALIBRATION_SEED));
    let mut text = serde_json::to_string_pretty(&c).map_err(Error::from)?;
    text.push('\n');
    emit(args.output.as_deref(), &text)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    eprintln!("effective config: {}", serde_json::to_string(&cfg).map_err(Error::from)?);
    let intr = load_intrinsics(cli.intrinsics.as_deref())?;
    match &cli.command {
        Command::Simulate(a) => simulate(a, &cfg, &intr),
        Command::Fit(a) => fit(a, &cfg, &intr),
        Command::Pipeline(a) => pipeline(a, &cfg, &intr),
        Command::Export(a) => export(a, &cfg, &intr),
        Command::Eval(a) => eval(a, &cfg),
        Command::Calibrate(a) => calibrate_cmd(a, cli.seed, &intr),
    }
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be an integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
