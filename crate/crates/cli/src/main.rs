//! `autoatlas` command-line pipeline.

mod commands;
mod config;
mod features;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{EmbedArgs, EvaluateArgs, PartitionArgs, PhantomArgs, PredictArgs, TrainArgs};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "autoatlas", version, about = "Unsupervised 3D partitioning with per-partition autoencoders")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for data-parallel work.
    #[arg(long, global = true, env = "AUTOATLAS_THREADS")]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic phantom dataset.
    Phantom(PhantomArgs),
    /// Train the partitioning network and autoencoders.
    Train(TrainArgs),
    /// Write label volumes, reconstructions and slice images.
    Partition(PartitionArgs),
    /// Write per-subject embedding features.
    Embed(EmbedArgs),
    /// Fit a regressor on embedding features and measure partition importance.
    Predict(PredictArgs),
    /// Tissue overlap, ablation and probability histogram tables.
    Evaluate(EvaluateArgs),
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = Some(o);
    }
    let threads = match cli.threads {
        Some(0) => anyhow::bail!("--threads must be >= 1"),
        Some(n) => {
            if !autoatlas::par::init_threads(n) {
                log::warn!("thread pool already initialized; --threads ignored");
            }
            n
        }
        None => autoatlas::par::current_threads(),
    };
    match cli.command {
        Command::Phantom(a) => commands::phantom(&mut cfg, a, threads),
        Command::Train(a) => commands::train(&mut cfg, a, threads),
        Command::Partition(a) => commands::partition(&mut cfg, a, threads),
        Command::Embed(a) => commands::embed(&mut cfg, a, threads),
        Command::Predict(a) => commands::predict(&mut cfg, a, threads),
        Command::Evaluate(a) => commands::evaluate(&mut cfg, a, threads),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
