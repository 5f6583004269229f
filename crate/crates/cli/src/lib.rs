//! The `fusionvote` command line: dataset synthesis, training, evaluation,
//! ensembling, ablation sweeps and Grad-CAM dumps.

pub mod ablate;
mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Failure while running a valid invocation; exit code 1.
    #[error(transparent)]
    Run(#[from] fusionvote::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fusionvote", version, about = "Fusion-model ensembles on PPM image datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic texture dataset as one PPM directory per class.
    Synth(SynthArgs),
    /// Train one fusion model and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Evaluate one checkpoint: metrics, confusion matrix and ROC curve.
    Eval(EvalArgs),
    /// Soft-vote four checkpoints and compare them with their members.
    Ensemble(EnsembleArgs),
    /// Train and compare fusion models with different extractor counts.
    Ablate(AblateArgs),
    /// Grad-CAM map of one image for one class.
    Explain(ExplainArgs),
    /// Print every configuration key with its default and meaning.
    Keys,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Images per class.
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset root to create.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file [default: built-in values for every key]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CNN backbone: plain, residual, dense or sep [default: the
    /// configuration's flavor key]
    #[arg(long)]
    pub flavor: Option<String>,
    /// Dataset root [default: the configuration's data key]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint to write; the loss history goes next to it.
    #[arg(long, default_value = "model.ckpt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate [required]
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset root.
    /// Dataset root [required]
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration supplying the split and preprocessing settings
    /// [default: built-in values for every key]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Which items to score: test or all.
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    /// Output directory.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Exactly four comma-separated checkpoints with distinct backbones
    /// [required]
    #[arg(long, value_delimiter = ',', required = true)]
    pub ckpts: Vec<PathBuf>,
    /// Dataset root [required]
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration supplying the split and preprocessing settings
    /// [default: built-in values for every key]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Which items to score: test or all.
    #[arg(long, default_value = "test")]
    pub split: SplitArg,
    /// Output directory.
    #[arg(long, default_value = "ensemble")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Run configuration file [default: built-in values for every key]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated entries: `<v>v<c>c` is one fusion model with v
    /// transformer and c CNN streams, `vote<n>` soft-votes n single-stream
    /// models with distinct backbones.
    #[arg(long, default_value = "1v1c,1v2c,2v1c,2v2c,vote4")]
    pub members: String,
    /// Dataset root [default: the configuration's data key]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "ablation")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Checkpoint to explain [required]
    #[arg(long)]
    pub ckpt: PathBuf,
    /// PPM image to explain [required]
    #[arg(long)]
    pub image: PathBuf,
    /// Class index to explain [required]
    #[arg(long)]
    pub class: usize,
    /// CNN-stream layer: backbone, aspp or se.
    #[arg(long, default_value = fusionvote::explain::DEFAULT_LAYER)]
    pub layer: String,
    /// Run configuration supplying the preprocessing settings [default:
    /// built-in values for every key]
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "explain")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Test,
    All,
}

impl std::str::FromStr for SplitArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "test" => Ok(SplitArg::Test),
            "all" => Ok(SplitArg::All),
            _ => Err(format!("expected test or all, got {s:?}")),
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr as one `error: ` line.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprintln!("error: a subcommand is required (try --help)");
            return 2;
        }
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            e.exit_code()
        }
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}
