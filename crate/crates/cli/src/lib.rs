//! The `mpvit` command line: synthesize data, train, evaluate, gradient-check
//! and compare MP-ViT models.
//!
//! Exit codes: 0 on success, 1 when work fails at runtime, 2 for usage or
//! configuration errors (including unreadable or malformed inputs).

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpvit_core::model::Variant;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(mpvit_core::Error),
    #[error("{0}")]
    Runtime(mpvit_core::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(mpvit_core::Error::InvalidArgument(msg.into()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mpvit", version, about = "Multi-plane vision transformer workflow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic multi-plane dataset.
    Synth(SynthArgs),
    /// Train a model and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split and write a report.
    Eval(EvalArgs),
    /// Check backpropagated gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// McNemar's test between two prediction files.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `manifest.tsv` and `volumes/`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    /// Negatives per positive.
    #[arg(long)]
    ratio: Option<f64>,
    /// Probability of dropping each optional contrast.
    #[arg(long)]
    drop_prob: Option<f64>,
    /// Keep the lesion visible only in the sagittal contrast.
    #[arg(long)]
    sagittal_only: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for the checkpoint and `metrics.tsv`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    no_modality_vector: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Report file; printed to stdout as well.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one score per line, in manifest order.
    #[arg(long)]
    preds_out: Option<PathBuf>,
    /// Also write the matching labels, one per line.
    #[arg(long)]
    labels_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "desk-tiny")]
    variant: Variant,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Coordinates probed per parameter tensor.
    #[arg(long, default_value_t = 2)]
    per_tensor: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    preds_a: PathBuf,
    #[arg(long)]
    preds_b: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// chi2-cc, exact-binomial or auto.
    #[arg(long, default_value = "chi2-cc")]
    method: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses the process arguments, runs one subcommand and maps the outcome to
/// an exit code.
pub fn run() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
