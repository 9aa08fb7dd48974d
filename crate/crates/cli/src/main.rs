//! `semantic-sfm`: synthesize survey datasets, run semantic SfM, label
//! external clouds, filter by confidence and write reports.

mod commands;
mod staging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "semantic-sfm", version, about = "Semantic structure-from-motion toolkit")]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic forest survey dataset.
    Synth(SynthArgs),
    /// Reconstruct a labeled point cloud from a dataset.
    Sfm(SfmArgs),
    /// Label an externally densified cloud from posed label rasters.
    Label(LabelArgs),
    /// Keep only points at or above a confidence threshold.
    Filter(FilterArgs),
    /// Write the confidence histogram and class summary of a PLY cloud.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SynthArgs {
    /// Scene seed; falls back to SEMANTIC_SFM_SEED, then 42.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 60)]
    pub trees: usize,
    #[arg(long, default_value_t = 90)]
    pub bushes: usize,
    /// Side length of the square scene, meters.
    #[arg(long, default_value_t = 165.0)]
    pub extent: f64,
    /// Flight height above mean ground, meters.
    #[arg(long, default_value_t = 100.0)]
    pub altitude: f64,
    #[arg(long = "overlap-fwd", default_value_t = 0.85)]
    pub overlap_fwd: f64,
    #[arg(long = "overlap-side", default_value_t = 0.80)]
    pub overlap_side: f64,
    /// Number of ground control points.
    #[arg(long, default_value_t = 6)]
    pub gcps: usize,
    #[arg(long, default_value_t = 800.0)]
    pub focal: f64,
    #[arg(long, default_value_t = 800)]
    pub width: usize,
    #[arg(long, default_value_t = 600)]
    pub height: usize,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SfmArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Key-value config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, `KEY=VALUE`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Pipeline seed; falls back to the config file, then SEMANTIC_SFM_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip label-agreement filtering of matches.
    #[arg(long)]
    pub no_semantic_filter: bool,
    /// Do not align to ground control points.
    #[arg(long)]
    pub no_gcp: bool,
    /// PLY encoding: binary or ascii.
    #[arg(long, default_value = "binary")]
    pub encoding: String,
    /// Confidence histogram bins.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// PLY whose vertex positions replace those of the visibility rows, in order.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    /// Visibility file, one `x y z n img_1 .. img_n` row per point.
    #[arg(long)]
    pub visibility: PathBuf,
    /// Camera poses, `image_filename r11 .. r33 tx ty tz` per line.
    #[arg(long)]
    pub poses: PathBuf,
    /// Directory of label rasters (`.pgm`); image ids are their sorted order.
    #[arg(long)]
    pub labels: PathBuf,
    /// Directory of RGB images for point colors.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Intrinsics file `focal cx cy width height`; defaults to camera.txt beside the poses.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Handling of out-of-image reprojections: clamp or drop.
    #[arg(long, default_value = "clamp")]
    pub oob_votes: String,
    #[arg(long, default_value = "binary")]
    pub encoding: String,
    /// Output PLY file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct FilterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Minimum confidence kept.
    #[arg(long)]
    pub tau: f64,
    #[arg(long, default_value = "binary")]
    pub encoding: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Reconstruction(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Reconstruction(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Sfm(a) => commands::sfm(a),
        Command::Label(a) => commands::label(a),
        Command::Filter(a) => commands::filter(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
