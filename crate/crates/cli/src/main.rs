//! `monoiqa`: generate synthetic data, train, evaluate, verify and ablate.
//!
//! Every command writes one JSON document to stdout and a human-readable
//! table to stderr. Exit codes: 0 success, 2 configuration, 3 data,
//! 4 numeric failure, 5 property violation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use monoiqa::train::EvalMode;
use monoiqa::ErrorKind;

#[derive(Parser)]
#[command(
    name = "monoiqa",
    version,
    about = "Multi-dataset quality regression with per-dataset monotonic transformers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-dataset tree (descriptors, manifests, feature files, latents).
    Synth(SynthArgs),
    /// Train on a data tree; writes the best checkpoint and a JSON-lines log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out data, or retrain over several splits.
    Eval(EvalArgs),
    /// Verify transformer monotonicity and gradients of a checkpoint or of random transformers.
    Check(CheckArgs),
    /// Train and evaluate one model per transformer depth.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Generator config (JSON). Omitted keys take their defaults; without a file the
    /// three default datasets are generated.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output data root.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the generator seed from the config [default: config value, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Run config (JSON): training keys plus optional `datasets` and `output_dir`.
    /// Without a file every default applies.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data root; dataset directories and feature paths are relative to it.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory [default: `output_dir` from the config].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed from the config [default: config value, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    /// Correlate the regressor output directly.
    Raw,
    /// Map predictions through each dataset's transformer first.
    Calibrated,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => EvalMode::Raw,
            ModeArg::Calibrated => EvalMode::Calibrated,
        }
    }
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate (N = 1) or whose stored training config to reuse (N > 1).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Data root.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of splits. 1 evaluates the checkpoint on the test subset of its own
    /// split; N > 1 retrains one model per split (seeds base..base+N) and reports medians.
    #[arg(long, default_value_t = 1)]
    pub splits: usize,
    /// Score mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Raw)]
    pub mode: ModeArg,
    /// Run config overriding the training config stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the base seed [default: config value].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "target")]
pub struct CheckTarget {
    /// Checkpoint whose transformers are verified.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Number of freshly initialised random transformers per depth.
    #[arg(long)]
    pub random: Option<usize>,
}

#[derive(Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub target: CheckTarget,
    /// Sorted inputs sampled per transformer in [-5, 5].
    #[arg(long, default_value_t = 100)]
    pub inputs: usize,
    /// Finite-difference trials per case kind (random) or per transformer (checkpoint).
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Depths of the random transformers.
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    pub depths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Run config shared by every depth.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data root.
    #[arg(long)]
    pub data: PathBuf,
    /// Transformer depths (number of CFCLs).
    #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
    pub depths: Vec<usize>,
    /// Accept depths other than 3, 5 and 7.
    #[arg(long)]
    pub allow_any_depth: bool,
    /// Overrides the seed from the config [default: config value, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Property => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Check(a) => commands::check(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(commands::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Violation) => ExitCode::from(5),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
