//! `coldstart`: data generation, graph building, training, evaluation and
//! serving from the command line. Every command writes a JSON run manifest.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lib(#[from] coldstart::Error),
    #[error("manifest serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn category(&self) -> (&'static str, u8) {
        use coldstart::Error as E;
        match self {
            CliError::Config(_) => ("config", 2),
            CliError::Lib(E::Io { .. }) => ("io", 3),
            CliError::Lib(E::SchemaVersion { .. }) => ("version", 4),
            CliError::Lib(E::Format { .. } | E::Parse { .. }) => ("format", 4),
            CliError::Lib(E::Net(_)) => ("network", 6),
            CliError::Lib(_) => ("invalid", 5),
            CliError::Json(_) => ("io", 3),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "coldstart", version, about = "Cold-start video CTR prediction with graph-guided feature transfer")]
struct Cli {
    /// Run configuration file (`key=value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Where to write the run manifest. Defaults to `<out>.manifest.json`,
    /// or stderr for commands without an output path.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Graph directory written by `build-graph`.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub users: PathBuf,
    /// Neighbor store written by `sample-neighbors`.
    #[arg(long)]
    pub neighbors: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world into a directory.
    SynthData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the heterogeneous graph from a video table.
    BuildGraph {
        #[arg(long)]
        videos: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-sample computation graphs of every cold video.
    SampleNeighbors {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a fresh model on all traffic.
    Pretrain {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log; defaults to `<out>.metrics.tsv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Continue training a checkpoint on cold-video traffic.
    Finetune {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Full dataset; when given, the cold set must be a subset of it.
        #[arg(long)]
        full: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Score a test set and report AUC.
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reference AUC for a RelaImpr line.
        #[arg(long)]
        baseline_auc: Option<f64>,
        /// Also write per-impression scores.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Train one model per ablation mask and report AUC and RelaImpr.
    Ablate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        full: PathBuf,
        #[arg(long)]
        cold: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the prediction daemon until killed.
    Serve {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Print full-precision scores instead of six decimals.
        #[arg(long)]
        exact: bool,
    },
    /// Replay a seeded workload against a daemon and report latency.
    Bench {
        #[arg(long)]
        addr: String,
        /// Graph directory used for the workload's id pools.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        users: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a neighbor store as text.
    DumpNeighbors {
        #[arg(long)]
        neighbors: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a checkpoint's shape manifest.
    DumpCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (cat, code) = e.category();
            eprintln!("error[{cat}]: {e}");
            ExitCode::from(code)
        }
    }
}
