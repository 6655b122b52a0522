//! `kinetok` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

pub const DATA_DIR_ENV: &str = "KINETOK_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "kinetok", version, about = "Motion tokenization, multi-task training and evaluation")]
pub struct Cli {
    /// JSON run configuration for the command; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the seeds in the run configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path (file or directory depending on the command).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Default directory for inputs and outputs.
    #[arg(long, global = true, env = DATA_DIR_ENV, default_value = "data")]
    pub data_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic captioned corpus as JSON lines plus a statistics sidecar.
    SynthData(commands::SynthArgs),
    /// Train a VQ-VAE motion tokenizer on a corpus.
    TrainTokenizer(commands::TokenizerArgs),
    /// Train the multi-task language model and write a bundle.
    TrainLm(commands::LmArgs),
    /// Run one task with a trained bundle.
    Generate(commands::GenerateArgs),
    /// Score a bundle with an evaluation suite.
    Evaluate(commands::EvaluateArgs),
    /// Convert robot trajectories to integrated-path CSV and SVG.
    ExportTraces(commands::ExportArgs),
}

/// Process exit status for a failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    use kinetok::Error as E;
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<E>()) else {
        return if err.chain().any(|c| c.downcast_ref::<config::UsageError>().is_some()) { 2 } else { 1 };
    };
    match e {
        E::Config(_) | E::Template(_) | E::Mismatch(_) | E::Embodiment(_) => 2,
        E::NonFinite(_) => 4,
        E::Data(_) | E::Shape(_) | E::TokenRange { .. } | E::Io { .. } | E::Json(_) | E::Generation(_) => 3,
        E::GraphConsumed => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
