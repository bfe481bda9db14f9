//! `ldl` command-line experiments: configuration, checkpoints and the
//! subcommands behind the binary.

pub mod checkpoint;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::ExperimentConfig;

/// Problems with user-supplied inputs (exit code 2).
#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read {}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("vocabulary {}", path.display())]
    Vocabulary {
        path: PathBuf,
        source: ldl_core::Error,
    },
    #[error("dataset {}", path.display())]
    Dataset {
        path: PathBuf,
        source: ldl_core::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] ldl_core::Error),
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CHECKPOINT: i32 = 3;

/// Exit status for an error: 3 for checkpoint problems, 2 for bad input or
/// configuration, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<CheckpointError>() {
            return EXIT_CHECKPOINT;
        }
        if cause.is::<InputError>() {
            return EXIT_INPUT;
        }
    }
    EXIT_OTHER
}

#[derive(Debug, Parser)]
#[command(name = "ldl", version, about = "Label-distribution amendment experiments")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config; defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Checkpoint to write (train) or read (evaluate, amend).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset CSV (train input, or the set to evaluate/amend).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset and its manifest.
    GenData,
    /// Write the class-word cosine similarity matrix.
    EmbedAnalyze,
    /// Train the autoencoder and task model; write checkpoint and reports.
    Train,
    /// Print accuracy of a checkpoint on a dataset as JSON.
    Evaluate,
    /// Write per-sample predictions, distributions and confidences.
    Amend,
}

fn required(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf, InputError> {
    path.clone()
        .ok_or_else(|| InputError::Invalid(format!("{flag} is required for this command")))
}

pub fn run(args: &Args) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    let out = config.output_dir.clone();
    let checkpoint = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join(commands::CHECKPOINT_FILE));

    match args.command {
        Command::GenData => {
            let path = commands::gen_data(&config, &out)?;
            log::info!("wrote {}", path.display());
        }
        Command::EmbedAnalyze => {
            let path = commands::embed_analyze(&config, &out)?;
            log::info!("wrote {}", path.display());
        }
        Command::Train => {
            if let Some(data) = &args.data {
                config.data = Some(data.clone());
            }
            commands::train(&config, &out, &checkpoint)?;
            log::info!("wrote {} and reports under {}", checkpoint.display(), out.display());
        }
        Command::Evaluate => {
            let data = required(&args.data, "--data")?;
            let result = commands::evaluate(&checkpoint, &data)?;
            println!("{}", serde_json::to_string(&result)?);
        }
        Command::Amend => {
            let data = required(&args.data, "--data")?;
            let path = commands::amend(&checkpoint, &data, &out)?;
            log::info!("wrote {}", path.display());
        }
    }
    Ok(())
}
