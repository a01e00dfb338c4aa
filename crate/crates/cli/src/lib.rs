//! `svbr` subcommands. Each command returns a [`CliError`] whose
//! [`exit_code`](CliError::exit_code) is the process status.

pub mod commands;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "SVBR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "svbr",
    version,
    about = "Non-blind spatially-varying defocus deblurring toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a training dataset from a directory of sharp images.
    Synth(SynthArgs),
    /// Train a network on a synthesized dataset.
    Train(TrainArgs),
    /// Deblur one image given its blur map.
    Deblur(DeblurArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Finite-difference check of the network gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    /// Bank patterns paired with each source image (1 to 39).
    #[arg(long, default_value_t = 39)]
    pub patterns: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.8)]
    pub split_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Depth 4, base width 32, batch 8, 32 + 32 epochs.
    Full,
    /// Depth 2, base width 8, batch 2, 3 + 3 epochs.
    Toy,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Defaults for every option below that is not given explicitly.
    #[arg(long, value_enum, default_value_t = Profile::Full)]
    pub profile: Profile,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_width: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs on the true blur fields.
    #[arg(long)]
    pub phase_a: Option<usize>,
    /// Epochs on the propagated blur maps.
    #[arg(long)]
    pub phase_b: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_drop_every: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub checkpoint_out: PathBuf,
    #[arg(long)]
    pub log_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DeblurArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// BMAP file or 8-bit grayscale raster (255 is radius 6).
    #[arg(long)]
    pub blur_map: PathBuf,
    #[arg(long, required_unless_present = "baseline")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Use per-scale Richardson-Lucy instead of the network.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, default_value_t = svbr_core::baseline::DEFAULT_RL_ITERATIONS)]
    pub iterations: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Predicted blur maps: a directory matched by file name, or one file.
    #[arg(long, requires = "map_gt")]
    pub map_pred: Option<PathBuf>,
    #[arg(long, requires = "map_pred")]
    pub map_gt: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Debug aid: distort the analytic gradients of one block type (I..V).
    #[arg(long, value_parser = commands::gradcheck::parse_block_kind)]
    pub corrupt: Option<svbr_net::BlockKind>,
}

/// Parses `args` (including the program name) and runs the command, writing
/// normal output to `out`. Diagnostics go to the log.
pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            write!(out, "{e}").map_err(|e| io_err("stdout", e))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Input(e.to_string())),
    };
    match cli.command {
        Command::Synth(a) => commands::synth::run(&a, out),
        Command::Train(a) => commands::train::run(&a, out),
        Command::Deblur(a) => commands::deblur::run(&a, out),
        Command::Eval(a) => commands::eval::run(&a, out),
        Command::Gradcheck(a) => commands::gradcheck::run(&a, out),
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`] when it holds a
/// positive integer.
pub fn configure_threads() {
    let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    else {
        return;
    };
    if n == 0 {
        return;
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
    {
        log::warn!("could not size the thread pool: {e}");
    }
}

fn io_err(what: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{what}: {e}"))
}
