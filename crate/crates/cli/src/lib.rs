//! Command-line orchestration: data generation, training, evaluation,
//! ablations and exports.
//!
//! Exit codes: 0 success, 1 domain/validation error, 2 I/O or file
//! format error. Every failure prints one diagnostic line to stderr.

mod commands;
mod config;

pub use config::{load_config, RunConfig};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use mvter_core::error::Error;

#[derive(Parser)]
#[command(
    name = "mvter",
    about = "Multi-view transformation-equivariant representation learning on procedural shapes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; unset flags fall back to the
/// config file, then MVTER_SEED (seed only), then defaults.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigFlags {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Decoding scheme: fusion or average
    #[arg(long)]
    scheme: Option<String>,
    /// Transformation-loss weight
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, visible_alias = "lr", allow_negative_numbers = true)]
    learning_rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    momentum: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    weight_decay: Option<f64>,
    /// Epochs between learning-rate halvings
    #[arg(long)]
    lr_halving_period: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Fraction of train objects whose labels feed the classifier
    #[arg(long, allow_negative_numbers = true)]
    label_rate: Option<f64>,
    /// Cameras on the ring
    #[arg(long)]
    views: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    elevation: Option<f64>,
    /// View resolution (square, divisible by 8)
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    ortho_extent: Option<f64>,
    #[arg(long)]
    points_per_object: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    val_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Worker threads for rendering and evaluation
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural shape dataset (.mvds)
    GenData {
        /// Output dataset file
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Train a model and write checkpoint + history
    Train {
        /// Dataset file (.mvds)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output run directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Classification accuracy of a checkpoint on every split
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Leave-one-out retrieval mAP on the test split
    Retrieve {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Transformation-estimation error over fresh random rotations
    TransformError {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of (object, rotation) trials
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Accuracy with random view subsets of several sizes
    AblateViews {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated view counts
        #[arg(long, default_value = "2,4,8,12")]
        counts: String,
        /// Random subsets drawn per object
        #[arg(long, default_value_t = 8)]
        subsets: usize,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Paired baseline / regularized training at several label rates
    AblateLabels {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated label rates in (0, 1]
        #[arg(long, default_value = "0.01,0.02,0.03,0.04,0.05,0.1")]
        rates: String,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// First-conv-block feature maps of one test object as PGM files
    ExportFeatures {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Index into the test split
        #[arg(long, default_value_t = 0)]
        object: usize,
        #[command(flatten)]
        flags: ConfigFlags,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) => 1,
        Error::Format(_) | Error::Io { .. } => 2,
    }
}

/// Runs one invocation; returns the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let line = e.to_string();
            eprintln!("error: {}", line.lines().next().unwrap_or("invalid arguments"));
            return 1;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
