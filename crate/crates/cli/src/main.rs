//! `docspot`: offline indexing and online querying of document images.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::List;

#[derive(Parser, Debug)]
#[command(name = "docspot", version, about = "Image retrieval and pattern spotting over document pages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` file supplying defaults for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice the command makes
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Primary output path
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ProposalArgs {
    /// Adaptive threshold window side (odd)
    #[arg(long)]
    pub block: Option<u32>,
    /// Adaptive threshold offset, fraction of 255
    #[arg(long)]
    pub offset: Option<f64>,
    /// Segmentation scales, comma-separated
    #[arg(long)]
    pub scales: Option<List<f64>>,
    #[arg(long)]
    pub min_region_px: Option<u64>,
    #[arg(long)]
    pub max_proposals: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GateArgs {
    /// Aspect-ratio gate tolerance
    #[arg(long)]
    pub gate_tolerance: Option<f64>,
    /// Disable the aspect-ratio gate
    #[arg(long)]
    pub no_gate: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus of pages with planted stamps plus ground truth
    Synth(commands::SynthArgs),
    /// Dump candidate boxes for every page of a corpus
    Propose(commands::ProposeArgs),
    /// Train the Siamese encoder and save the model
    Train(commands::TrainArgs),
    /// Embed every candidate of a corpus into a feature store
    Index(commands::IndexArgs),
    /// Rank stored candidates against one query patch
    Query(commands::QueryArgs),
    /// Score every ground-truth query and write the report
    Eval(commands::EvalArgs),
    /// Time the search paths and distance throughput per dimension
    Bench(commands::BenchArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Propose(a) => commands::propose(&a),
        Command::Train(a) => commands::train(&a),
        Command::Index(a) => commands::index(&a),
        Command::Query(a) => commands::query(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
