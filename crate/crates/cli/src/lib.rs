//! Command-line surface: argument parsing, exit codes, and the
//! experiment subcommands (synth, lift, pseudo-label, pretrain,
//! finetune, semi, eval, gradcheck, histogram).

pub mod commands;
pub mod config;

pub use config::{load_config, save_manifest, BudgetKind, ExperimentConfig};

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// CLI failure with a machine-parsable one-line rendering and a stable
/// exit code: usage 2, config 3, missing file 4, anything else 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config { line: Option<usize>, message: String },
    MissingFile(PathBuf),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config { .. } => 3,
            CliError::MissingFile(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(message) => write!(f, "error[usage]: {message}"),
            CliError::Config { line: Some(line), message } => {
                write!(f, "error[config]: line {line}: {message}")
            }
            CliError::Config { line: None, message } => write!(f, "error[config]: {message}"),
            CliError::MissingFile(path) => {
                write!(f, "error[missing-file]: {}", path.display())
            }
            CliError::Runtime(message) => write!(f, "error[runtime]: {message}"),
        }
    }
}

impl From<lift3d::Error> for CliError {
    fn from(err: lift3d::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Configuration file (`key = value` lines; unknown keys are errors).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base random seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for artifacts and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct WorldArg {
    /// World directory (overrides `world_dir` from the config).
    #[arg(long)]
    pub world: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SemiArgs {
    /// Entropy-minimization weight on unlabeled data.
    #[arg(long)]
    pub entropy_weight: Option<f64>,
    /// Mean-teacher consistency weight (before ramp-up).
    #[arg(long)]
    pub consistency_weight: Option<f64>,
    /// EMA smoothing of the teacher parameters.
    #[arg(long)]
    pub ema_alpha: Option<f64>,
    /// Epochs over which the consistency weight ramps up.
    #[arg(long)]
    pub rampup_epochs: Option<usize>,
    /// Task family for default weights.
    #[arg(long, value_parser = ["cls", "seg"])]
    pub task: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct BudgetArgs {
    /// Label budget protocol.
    #[arg(long, value_parser = ["full", "la", "lr"])]
    pub budget: Option<String>,
    /// Labeled points per scene for the `la` budget.
    #[arg(long)]
    pub budget_points: Option<usize>,
    /// Labeled-scene fraction for the `lr` budget.
    #[arg(long)]
    pub budget_fraction: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world of room scenes.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of scenes to generate.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Lift every frame of a world to a point-cloud PLY.
    Lift {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        world: WorldArg,
    },
    /// Run the teacher over every frame and write SLAB soft-label maps.
    PseudoLabel {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        world: WorldArg,
        /// Teacher spec: `oracle:<noise>,<temperature>[,<blur>]` or `file:<dir>`.
        #[arg(long)]
        teacher: Option<String>,
    },
    /// Pre-train the backbone on lifted pseudo-labeled frames.
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        world: WorldArg,
        #[arg(long)]
        teacher: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Supervised fine-tuning under a label budget.
    Finetune {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        world: WorldArg,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Initial checkpoint (a pre-training head is stripped if present).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Semi-supervised fine-tuning (entropy + mean-teacher consistency).
    Semi {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        world: WorldArg,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        semi: SemiArgs,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint (or a predictions directory) on the eval split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        world: WorldArg,
        /// Checkpoint to evaluate.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Directory of predicted clouds (`scene_NNN/cloud.ply` with labels).
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Finite-difference check of the model gradients at toy size.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Summed pseudo-label probability per class over a world's SLAB maps.
    Histogram {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        world: WorldArg,
    },
}

#[derive(Debug, Parser)]
#[command(name = "lift3d", version, about = "2D-to-3D label transfer for point-cloud segmentation, desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version print to stdout and exit 0; usage errors
            // go to stderr and exit 2.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{err}");
            err.exit_code()
        }
    }
}
