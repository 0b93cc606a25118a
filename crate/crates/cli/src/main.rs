//! `aerothreat` — curate, annotate, split, train and evaluate from the shell.
//!
//! Exit codes: 0 success, 2 validation or configuration error, 3 data error,
//! 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use aerothreat::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aerothreat", version, about = "Airborne object category and threat-level pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic shape/hue dataset as PNG source directories.
    Synth(SynthArgs),
    /// Ingest source directories into a deduplicated manifest.
    Curate(CurateArgs),
    /// Assign threat levels with a rule file.
    Annotate(AnnotateArgs),
    /// Stratified train/test split.
    Split(SplitArgs),
    /// Train the dual-head network.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or score a predictions file.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Images per (category, threat) combination.
    #[arg(long, default_value_t = 10)]
    per_combination: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Label space whose four categories name the shapes.
    #[arg(long)]
    label_space: Option<String>,
}

#[derive(Args)]
struct CurateArgs {
    #[command(flatten)]
    common: Common,
    /// DIR:CATEGORY:NAME[:ATTR,ATTR...]; repeatable.
    #[arg(long = "source")]
    sources: Vec<String>,
    /// File with one source specification per line.
    #[arg(long)]
    sources_file: Option<PathBuf>,
    /// Preset name (AVD, AODTA) or a comma-separated category list.
    #[arg(long)]
    label_space: Option<String>,
    /// Equalise category counts with augmented copies.
    #[arg(long)]
    balance: bool,
    /// Augmentation seed used by --balance.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnnotateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Rule file (JSON). Defaults to the built-in rules.
    #[arg(long)]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq, Debug)]
pub enum BackboneArg {
    Standin,
    #[value(name = "efficientnet-b4")]
    EfficientnetB4,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Split and annotated manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backbone: Option<BackboneArg>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "predictions")]
    manifest: Option<PathBuf>,
    /// CSV of `head,truth,pred` rows, scored without any model.
    #[arg(long, conflicts_with_all = ["checkpoint", "manifest"])]
    predictions: Option<PathBuf>,
    /// Category order for --predictions (preset or comma list).
    #[arg(long)]
    label_space: Option<String>,
}

/// Maps library errors onto the documented exit codes.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Format { .. } | Error::Unsupported(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Unannotatable { .. } | Error::Decode { .. } | Error::Numeric(_) => 3,
        Error::Io { .. } | Error::State(_) => 1,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Some(raw) = std::env::var_os("AEROTHREAT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Validation(format!("AEROTHREAT_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::State(format!("cannot size the worker pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Curate(a) => commands::curate(a),
        Command::Annotate(a) => commands::annotate(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
