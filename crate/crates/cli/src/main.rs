use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ssomvr::features::build_feature_field;
use ssomvr::pipeline::{apply_script, bench, render_groups, train_lattice, TrainConfig};
use ssomvr::render::{write_png, Camera};
use ssomvr::session::View;
use ssomvr::ssom::{assign_voxels, LatticeSnapshot};
use ssomvr::volume::{load_raw_file, make_phantom, PhantomKind, Volume, VolumeError};
use ssomvr::{ChannelWeights, ReplayScript, TfConfig, TrainingParams};

#[derive(Parser)]
#[command(name = "ssomvr", version, about = "Spherical SOM transfer functions for volume rendering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a lattice on a volume and write a snapshot.
    Train(TrainArgs),
    /// Apply a group script to a trained snapshot and render a PNG.
    Replay(ReplayArgs),
    /// Time feature building, training, assignment and one render.
    Bench(BenchArgs),
    /// Write a synthetic volume as RAW + JSON sidecar.
    Phantom(PhantomArgs),
}

#[derive(Args)]
struct VolumeArgs {
    /// Headerless RAW samples.
    #[arg(long)]
    volume: PathBuf,
    /// JSON sidecar; defaults to the volume path with a `.json` extension.
    #[arg(long)]
    meta: Option<PathBuf>,
}

impl VolumeArgs {
    fn load(&self) -> Result<Volume, CliError> {
        let meta = self.meta.clone().unwrap_or_else(|| self.volume.with_extension("json"));
        if !meta.exists() {
            return Err(CliError::input(format!("sidecar not found: {}", meta.display())));
        }
        if !self.volume.exists() {
            return Err(CliError::input(format!("volume not found: {}", self.volume.display())));
        }
        load_raw_file(&self.volume, &meta).map_err(|e| match e {
            VolumeError::Io { .. } | VolumeError::Sidecar { .. } => CliError::input(e.to_string()),
            other => CliError::run(other.to_string()),
        })
    }
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 3)]
    level: u32,
    #[arg(long, default_value_t = 20)]
    epochs: u32,
    #[arg(long, default_value_t = 0.5)]
    eta0: f64,
    #[arg(long = "eta-min", default_value_t = 0.01)]
    eta_min: f64,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
    sigma0: f64,
    #[arg(long = "sigma-min", default_value_t = 0.02)]
    sigma_min: f64,
    /// Seeds both the initial weights and the sample order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training subsample stride; 0 targets about 50,000 samples.
    #[arg(long, default_value_t = 0)]
    stride: usize,
}

impl TrainFlags {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            level: self.level,
            lattice_seed: self.seed,
            params: TrainingParams {
                epochs: self.epochs,
                eta0: self.eta0,
                eta_min: self.eta_min,
                sigma0: self.sigma0,
                sigma_min: self.sigma_min,
                seed: self.seed,
                stride: self.stride,
            },
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    volume: VolumeArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Snapshot output path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics report path; defaults to `<out>.metrics.json`.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    volume: VolumeArgs,
    #[arg(long)]
    snapshot: PathBuf,
    /// Group script: `[{"node_ids":[...]}, ...]`.
    #[arg(long)]
    script: PathBuf,
    /// `{"camera": {...}, "settings": {...}}`, both optional.
    #[arg(long = "camera-json")]
    camera_json: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    volume: VolumeArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long = "camera-json")]
    camera_json: Option<PathBuf>,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    /// constant, ramp-x, two-blobs or quadratic-x.
    #[arg(long)]
    kind: String,
    /// Edge length of the cubic volume.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Constant value or quadratic coefficient.
    #[arg(long, default_value_t = 0.5)]
    value: f64,
    /// Output RAW path; the sidecar goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    /// Missing or malformed inputs.
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn run(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ssomvr::Error> for CliError {
    fn from(e: ssomvr::Error) -> Self {
        Self::run(e.to_string())
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::run(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn read_view(path: Option<&Path>) -> Result<View, CliError> {
    let Some(path) = path else {
        return Ok(View::default());
    };
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn run_train(args: &TrainArgs) -> Result<(), CliError> {
    let volume = args.volume.load()?;
    let field = build_feature_field(&volume, ChannelWeights::default()).map_err(ssomvr::Error::from)?;
    let trained = train_lattice(&field, &args.train.config())?;
    let snapshot = LatticeSnapshot::capture(&trained.lattice, field.weights());
    write_text(&args.out, &snapshot.to_json())?;
    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.metrics.json", args.out.display())));
    write_text(&metrics_path, &to_json(&trained.metrics))?;
    println!("{}", to_json(&trained.metrics));
    Ok(())
}

fn run_replay(args: &ReplayArgs) -> Result<(), CliError> {
    let volume = args.volume.load()?;
    let snapshot = LatticeSnapshot::from_json(&read_text(&args.snapshot)?)
        .map_err(|e| CliError::input(format!("{}: {e}", args.snapshot.display())))?;
    let script = ReplayScript::from_json(&read_text(&args.script)?)
        .map_err(|e| CliError::input(format!("{}: {e}", args.script.display())))?;
    let view = read_view(args.camera_json.as_deref())?;
    let lattice = snapshot.restore().map_err(ssomvr::Error::from)?;
    let field = build_feature_field(&volume, snapshot.feature_weights).map_err(ssomvr::Error::from)?;
    let assignment = assign_voxels(&lattice, &field);
    let tf = TfConfig::default();
    let groups = apply_script(&script, &assignment, &volume, &tf)?;
    let camera = view
        .camera
        .unwrap_or_else(|| Camera::preset(volume.dims(), volume.meta().spacing));
    let (_, img) = render_groups(&groups, &volume, &field, &tf, &camera, &view.settings)?;
    write_png(&img, &args.out).map_err(ssomvr::Error::from)?;
    Ok(())
}

fn run_bench(args: &BenchArgs) -> Result<(), CliError> {
    let volume = args.volume.load()?;
    let view = read_view(args.camera_json.as_deref())?;
    let camera = view
        .camera
        .unwrap_or_else(|| Camera::preset(volume.dims(), volume.meta().spacing));
    let report = bench(
        &volume,
        ChannelWeights::default(),
        &args.train.config(),
        &camera,
        &view.settings,
    )?;
    match &args.out {
        Some(path) => write_text(path, &to_json(&report)),
        None => {
            println!("{}", to_json(&report));
            Ok(())
        }
    }
}

fn run_phantom(args: &PhantomArgs) -> Result<(), CliError> {
    let kind = match args.kind.as_str() {
        "constant" => PhantomKind::Constant {
            value: args.value as f32,
        },
        "ramp-x" => PhantomKind::RampX,
        "two-blobs" => PhantomKind::TwoBlobs {
            first: 0.2,
            second: 0.9,
        },
        "quadratic-x" => PhantomKind::QuadraticX { a: args.value },
        other => return Err(CliError::input(format!("unknown phantom kind `{other}`"))),
    };
    let phantom = make_phantom(&kind, [args.size; 3]).map_err(|e| CliError::input(e.to_string()))?;
    // 8-bit quantization of the [0, 1] intensities.
    let bytes: Vec<u8> = phantom
        .volume
        .intensities()
        .iter()
        .map(|&v| (f64::from(v) * 255.0).round() as u8)
        .collect();
    fs::write(&args.out, bytes).map_err(|e| CliError::run(format!("{}: {e}", args.out.display())))?;
    write_text(&args.out.with_extension("json"), &phantom.volume.meta().to_sidecar_json())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Replay(a) => run_replay(a),
        Command::Bench(a) => run_bench(a),
        Command::Phantom(a) => run_phantom(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ssomvr: {e}");
            ExitCode::from(e.code)
        }
    }
}
