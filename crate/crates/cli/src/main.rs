//! Pipeline runner for seven-class dermoscopic lesion classification.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{RunConfig, ValidationMode};

#[derive(Parser)]
#[command(
    name = "derma",
    version,
    about = "Seven-class dermoscopic lesion classification pipeline",
    arg_required_else_help = true
)]
struct Cli {
    /// Run-config file (TOML); required by every subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides all module seeds coherently.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Override a config key, e.g. --set train.batch_size=8 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory; overrides [output] dir.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest ground truth, write the distribution table, split manifests,
    /// and the image verification report.
    Prepare,
    /// Fine-tune a backbone on the prepared split.
    Train {
        /// Backbone name; defaults to [model] backbone from the config.
        backbone: Option<String>,
    },
    /// Run inference over a manifest of image ids.
    Predict {
        /// Checkpoint to load (best.ckpt or last.ckpt from a training run).
        checkpoint: PathBuf,
        /// Manifest with one image id per line.
        manifest: PathBuf,
    },
    /// Fuse prediction files into one submission.
    Ensemble {
        /// Prediction files; falls back to [ensemble] members when omitted.
        predictions: Vec<PathBuf>,
    },
    /// Score a prediction file against a ground-truth table.
    Evaluate {
        predictions: PathBuf,
        truth: PathBuf,
    },
}

fn load_config(cli: &Cli, mode: ValidationMode) -> Result<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .context("--config PATH is required")?;
    RunConfig::load(path, &cli.set, cli.seed, cli.output.as_deref(), mode)
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Prepare => commands::prepare::run(&load_config(&cli, ValidationMode::Full)?),
        Command::Train { backbone } => commands::train::run(
            &load_config(&cli, ValidationMode::Full)?,
            backbone.as_deref(),
        ),
        Command::Predict {
            checkpoint,
            manifest,
        } => commands::predict::run(
            &load_config(&cli, ValidationMode::Full)?,
            checkpoint,
            manifest,
        ),
        Command::Ensemble { predictions } => commands::ensemble::run(
            &load_config(&cli, ValidationMode::Light)?,
            predictions,
        ),
        Command::Evaluate { predictions, truth } => commands::evaluate::run(
            &load_config(&cli, ValidationMode::Light)?,
            predictions,
            truth,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
