//! `exco`: extreme-community clustering of multichannel time series.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use exco_core::ExcoError;
use serde::Serialize;

/// Exit codes shared by every subcommand.
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DEGENERATE: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "exco",
    version,
    about = "Cluster channels into communities of co-occurring extremes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with known extremal structure.
    Simulate(SimulateArgs),
    /// Cluster one recording (or one time range of it) into communities.
    Cluster(ClusterArgs),
    /// Estimate the pairwise tail-correlation matrix.
    Chi(ChiArgs),
    /// Cluster every sliding window of a recording.
    Windows(WindowsArgs),
    /// Turn a windowed result into persistence matrices.
    Persist(PersistArgs),
    /// Best clustering objective over a range of cluster counts.
    Ksweep(KsweepArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Three channels T3, P4, T6 with a dependent P4/T6 pair.
    Fig3,
    /// Independent blocks of mutually dependent channels.
    Blocks,
    /// One moving-average series of stable innovations.
    Ma,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: Model,
    /// Number of samples.
    #[arg(long = "T", default_value_t = 100_000)]
    pub t: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; a config echo is written next to it with extension .json.
    #[arg(long)]
    pub out: PathBuf,
    /// Block sizes for the blocks model, e.g. 4,4,4.
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<usize>>,
    /// Stable index of the innovations (blocks and ma models).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Moving-average coefficients for the ma model, e.g. 1,0.5,-0.6,1.5.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coeffs: Option<Vec<f64>>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Interictal,
    #[value(alias = "pre-ictal")]
    Preictal,
    Ictal,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Keep samples whose Pareto-scale norm exceeds its quantile.
    Norm,
    /// Keep samples where any channel exceeds its own marginal quantile.
    Marginal,
}

/// Where the samples come from and how they are prepared.
#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// CSV with a header of channel labels and one sample per row.
    #[arg(long)]
    pub input: PathBuf,
    /// Sampling rate in Hz.
    #[arg(long)]
    pub rate: f64,
    /// Frequency band: none, delta, theta, alpha, beta or gamma.
    #[arg(long, default_value = "none")]
    pub band: String,
    /// Start of the analysed range in seconds.
    #[arg(long = "from")]
    pub from_s: Option<f64>,
    /// End of the analysed range in seconds (exclusive).
    #[arg(long = "to")]
    pub to_s: Option<f64>,
}

/// Threshold and clustering settings.
#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Number of clusters [default: 5, or the per-phase table value when
    /// --phase and --band alpha|beta are given].
    #[arg(long)]
    pub k: Option<usize>,
    /// Seizure phase, used only to pick the default k.
    #[arg(long, value_enum)]
    pub phase: Option<Phase>,
    /// Quantile level of the exceedance threshold.
    #[arg(long, default_value_t = 0.90)]
    pub quantile: f64,
    #[arg(long, value_enum, default_value_t = Mode::Norm)]
    pub threshold_mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub restarts: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Also store the tail-correlation matrix at the same quantile.
    #[arg(long)]
    pub with_chi: bool,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Result document (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct WindowsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Window length in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub window: f64,
    /// Distance between window starts in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub stride: f64,
    /// Result document (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ChiArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 0.90)]
    pub quantile: f64,
    /// Matrix CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional SVG heatmap.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PersistArgs {
    /// Result document written by `exco windows`.
    #[arg(long)]
    pub result: PathBuf,
    /// Windows starting before this second form the "pre" matrix, the rest
    /// the "post" matrix. Without it a single matrix is written.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct KsweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 2)]
    pub kmin: usize,
    #[arg(long, default_value_t = 10)]
    pub kmax: usize,
    #[arg(long, default_value_t = 0.90)]
    pub quantile: f64,
    #[arg(long, value_enum, default_value_t = Mode::Norm)]
    pub threshold_mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub restarts: usize,
    /// CSV of (k, objective).
    #[arg(long)]
    pub out: PathBuf,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn degenerate(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DEGENERATE,
            message: message.into(),
        }
    }
}

impl From<ExcoError> for Failure {
    fn from(e: ExcoError) -> Self {
        let code = match &e {
            e if e.is_degenerate() => EXIT_DEGENERATE,
            ExcoError::Range(_) => EXIT_DEGENERATE,
            ExcoError::Io(_)
            | ExcoError::Json(_)
            | ExcoError::Parse { .. }
            | ExcoError::InvalidInput(_) => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        ExcoError::Io(e).into()
    }
}

/// Size the global worker pool from `EXCO_THREADS` (unset or 0: one worker
/// per core).
fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("EXCO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        Failure::usage(format!(
            "EXCO_THREADS must be a nonnegative integer, got {raw:?}"
        ))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot size thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Chi(a) => commands::chi(&a),
        Command::Windows(a) => commands::windows(&a),
        Command::Persist(a) => commands::persist(&a),
        Command::Ksweep(a) => commands::ksweep(&a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("exco: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
