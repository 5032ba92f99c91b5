//! `bdpl`: train and evaluate the behavior-aware dual-channel preference
//! learning recommender.
//!
//! Typical flow:
//!
//! ```text
//! bdpl synth      --config quickstart.json     # planted synthetic data
//! bdpl preprocess --config quickstart.json     # filter, split, cache
//! bdpl train      --config quickstart.json     # checkpoint + telemetry
//! bdpl evaluate   --config quickstart.json --split test
//! bdpl experiment --config quickstart.json --suite ablation
//! ```

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bdpl::commands;
use bdpl::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "bdpl", version, about = "Behavior-aware dual-channel preference learning recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the planted-structure synthetic dataset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Load, filter, split, and cache raw interactions.
    Preprocess {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train on the cached split; writes checkpoint and telemetry.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint on a cached split (full ranking).
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train and compare a variant suite (`ablation` or `cascade`).
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        suite: String,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load_config(path: &std::path::Path, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    overrides.apply(&mut config);
    Ok(config)
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Synth { config, overrides } => commands::cmd_synth(&load_config(&config, &overrides)?),
        Command::Preprocess { config, overrides } => {
            commands::cmd_preprocess(&load_config(&config, &overrides)?)
        }
        Command::Train { config, overrides } => commands::cmd_train(&load_config(&config, &overrides)?),
        Command::Evaluate { config, checkpoint, split, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            commands::cmd_evaluate(&cfg, checkpoint.as_deref(), &split)
        }
        Command::Experiment { config, suite, overrides } => {
            commands::cmd_experiment(&load_config(&config, &overrides)?, &suite)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
