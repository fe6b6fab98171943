//! `tnet`: generate glyph datasets, train, evaluate, profile and visualize
//! scale-space traversal networks.

mod commands;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tnet_core::Error;

#[derive(Parser, Debug)]
#[command(name = "tnet", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone, Copy)]
pub struct Common {
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel sections (0 = all cores, 1 = sequential).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic glyph dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a network and write checkpoints and per-step metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Total optimizer steps; overrides `train.steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Report accuracy, policy metrics and FLOPs per attended-location count.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Location counts at the last level, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        locations: Vec<usize>,
        /// Evaluate with this configuration instead of the checkpoint's own.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the FLOPs breakdown and parameter count of a configuration.
    Profile {
        /// Run configuration file.
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        config: Option<PathBuf>,
        /// Built-in configuration: synthetic, paper-imagenet or paper-fmow.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long, value_delimiter = ',')]
        locations: Vec<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write attention overlays as PPM images.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of samples to render.
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        locations: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Format { .. } => 3,
        Error::NonFinite(_) => 4,
        Error::Mismatch(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, out, common } => commands::gen_data(&config, &out, common),
        Command::Train { config, data, out, steps, resume, common } => {
            commands::train(&config, &data, &out, steps, resume.as_deref(), common)
        }
        Command::Eval { checkpoint, data, locations, config, common } => {
            commands::eval(&checkpoint, &data, &locations, config.as_deref(), common)
        }
        Command::Profile { config, spec, locations, common } => {
            commands::profile(config.as_deref(), spec.as_deref(), &locations, common)
        }
        Command::Visualize { checkpoint, data, out, count, locations, common } => {
            commands::visualize(&checkpoint, &data, &out, count, locations, common)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
