//! `rffi`: generate corpora, pretrain, fine-tune, evaluate and sweep.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "rffi", version, about = "Synthetic LoRa RF-fingerprinting workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a packet corpus (manifest + IQ blob)
    Gen(Common),
    /// Contrastive pretraining of the feature extractor on unlabeled packets
    Pretrain(Common),
    /// Siamese fine-tuning on packets from two receivers
    Finetune(Common),
    /// Evaluate a model on a labeled corpus
    Eval(Common),
    /// Paired with/without-pretraining fine-tunes over packet counts
    Sweep(Common),
}

#[derive(Args, Clone)]
pub struct Common {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initial extractor checkpoint (finetune), or the model to evaluate (eval)
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output directory (overrides `out` in the config)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed (overrides the config seed)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Convolution width multiplier in (0, 1]
    #[arg(long)]
    pub width_scale: Option<f64>,
    /// Print the defaults of this command with their provenance and exit
    #[arg(long)]
    pub show_defaults: bool,
}

/// Failure classes mapped to exit codes.
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<rffi::Error>() {
            Some(rffi::Error::Config(_)) => Failure::Usage(e),
            _ => Failure::Runtime(e),
        }
    }
}

impl From<rffi::Error> for Failure {
    fn from(e: rffi::Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

fn init_workers() {
    if let Some(n) = std::env::var("RFFI_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // ignore the error if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    init_workers();
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Gen(c) => ("gen", c),
        Command::Pretrain(c) => ("pretrain", c),
        Command::Finetune(c) => ("finetune", c),
        Command::Eval(c) => ("eval", c),
        Command::Sweep(c) => ("sweep", c),
    };
    if common.show_defaults {
        for (k, v, p) in config::defaults(name) {
            println!("{k} = {v}    # {p}");
        }
        return ExitCode::SUCCESS;
    }
    let result = match cli.command {
        Command::Gen(c) => commands::gen(&c),
        Command::Pretrain(c) => commands::pretrain(&c),
        Command::Finetune(c) => commands::finetune(&c),
        Command::Eval(c) => commands::eval(&c),
        Command::Sweep(c) => commands::sweep(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
