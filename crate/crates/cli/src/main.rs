//! `rawnoise` command-line tool.

mod commands;
mod params;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rawnoise", version, about = "Noise-accounted augmentation and calibration for RAW images")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Progress on stderr.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a noise model from bursts of a static scene.
    Calibrate(CalibrateArgs),
    /// Capture synthetic frames with a Poisson-Gaussian sensor.
    Simulate(SimulateArgs),
    /// Apply augmentations to a frame or burst.
    Augment(AugmentArgs),
    /// Develop a RAW frame to 8-bit RGB.
    Develop(DevelopArgs),
    /// Compare converted captures against real ones.
    #[command(subcommand)]
    Validate(ValidateCommand),
    /// Time each operator.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Burst directories holding frame_0000.raw16, frame_0001.raw16, ...
    #[arg(long, num_args = 1.., required = true)]
    bursts: Vec<PathBuf>,
    /// Regions JSON: one list for all bursts, or one list per burst.
    #[arg(long)]
    regions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Full calibration report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// CalibrationConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    normality_buckets: Option<usize>,
    #[arg(long, value_enum)]
    mean_estimate: Option<MeanArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MeanArg {
    Pixel,
    RegionPhase,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    kind: SimKind,
    /// Simulation parameters JSON; defaults apply to missing fields.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    frames: Option<usize>,
    /// Comma-separated gains in dB.
    #[arg(long, value_delimiter = ',')]
    gains: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SimKind {
    /// Bursts per gain and illumination plus regions.json.
    Burst,
    /// One motion-blurred frame per gain.
    Blur,
    /// One frame per gain.
    Scene,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// A frame (.raw16 with .json sidecar) or a burst directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// noise_model.json.
    #[arg(long)]
    model: PathBuf,
    /// AugmentConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ours")]
    mode: AugmentMode,
    /// Fix the contrast factor, overriding the config range.
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AugmentMode {
    Ours,
    Naive,
    WoPrior,
    /// Variance-stabilized values (f64).
    Ksigma,
    /// Per-pixel model variance (f64).
    Varmap,
}

#[derive(Debug, Args)]
struct DevelopArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Tone curve JSON.
    #[arg(long, default_value = r#"{"variant":"simplest","gamma":5}"#)]
    curve: String,
    /// Output image, .ppm or .png.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ValidateCommand {
    /// Contrast conversion against real dimmer captures.
    Alignment(AlignmentArgs),
    /// Blur conversion against real motion-blurred captures.
    Blur(BlurArgs),
    /// Per-pixel normality over time.
    Normality(NormalityArgs),
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Model driving the conversion.
    #[arg(long)]
    model: PathBuf,
    /// Model of the simulated sensor; defaults to --model.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// ChartSetup JSON.
    #[arg(long)]
    setup: Option<PathBuf>,
    #[arg(long, default_value_t = 6.0)]
    gain_db: f64,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AlignmentArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5")]
    contrast: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ours,wo_prior,none")]
    methods: Vec<MethodArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Ours,
    #[value(name = "wo_prior")]
    WoPrior,
    None,
}

#[derive(Debug, Args)]
struct BlurArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Blur distances in Bayer quads.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    distances: Vec<u32>,
    #[arg(long, value_enum, default_value = "horizontal")]
    direction: DirectionArg,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "noise_accounted,naive")]
    modes: Vec<BlurModeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BlurModeArg {
    #[value(name = "noise_accounted")]
    NoiseAccounted,
    Naive,
}

#[derive(Debug, Args)]
struct NormalityArgs {
    /// Burst directory; without it a chart burst is simulated from --model.
    #[arg(long)]
    burst: Option<PathBuf>,
    /// Regions JSON for --burst.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 6.0)]
    gain_db: f64,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 10)]
    buckets: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// BenchConfig JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(rawnoise::Error),
}

impl From<rawnoise::Error> for Failure {
    fn from(e: rawnoise::Error) -> Self {
        Failure::Data(e)
    }
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            error_line("usage", &first);
            return ExitCode::from(1);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            error_line("usage", &format!("cannot size thread pool: {e}"));
            return ExitCode::from(1);
        }
    }
    let ctx = commands::Context { seed: cli.seed, verbose: cli.verbose };
    match commands::run(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            error_line("usage", &m);
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            error_line(e.kind(), &e.to_string());
            ExitCode::from(2)
        }
    }
}
