//! `taylorattn`: expansion curves, method comparison, scaling benchmarks
//! and seeded data generation.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "taylorattn",
    version,
    about = "Taylor-series softmax attention toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for all generated data.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Score damping factor; scores are divided by alpha * sqrt(d_k).
    #[arg(long, global = true, default_value_t = 3.0)]
    pub alpha: f64,

    /// Taylor order of the exponential approximation.
    #[arg(long, global = true, default_value_t = 2)]
    pub order: u8,

    /// Layer-norm epsilon.
    #[arg(long, global = true, default_value_t = 1e-5)]
    pub epsilon: f64,

    /// Drop the constant term of the expansion.
    #[arg(long, global = true, default_value_t = false, action = ArgAction::Set,
          num_args = 0..=1, default_missing_value = "true")]
    pub subtract_one: bool,

    /// Causal (autoregressive) masking.
    #[arg(long, global = true, default_value_t = false, action = ArgAction::Set,
          num_args = 0..=1, default_missing_value = "true")]
    pub causal: bool,

    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample exp(x) and its truncated Taylor series on a grid.
    TaylorPlot(TaylorPlotArgs),
    /// Measure how far each method is from exact softmax attention.
    Compare(CompareArgs),
    /// Time methods over increasing sequence lengths and fit log-log slopes.
    Bench(BenchArgs),
    /// Write seeded Q, K, V matrices as CSV.
    Gen(GenArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TaylorPlotArgs {
    #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
    pub x_min: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    pub x_max: f64,
    #[arg(long, default_value_t = 401)]
    pub points: u32,
    /// Taylor orders to tabulate.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub orders: Vec<u8>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Sequence length.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub n: u32,
    #[arg(long = "d-k", default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub d_k: u32,
    #[arg(long = "d-v", default_value_t = 16)]
    pub d_v: u32,
    /// Comma-separated method labels; defaults follow --order.
    #[arg(long)]
    pub methods: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Comma-separated, strictly increasing sequence lengths (at least 4).
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<u32>,
    #[arg(long, default_value_t = 5)]
    pub repeats: u32,
    /// Comma-separated method labels; defaults follow --order.
    #[arg(long)]
    pub methods: Option<String>,
    /// Evaluate query rows of the linear path on all cores.
    #[arg(long, default_value_t = false, action = ArgAction::Set,
          num_args = 0..=1, default_missing_value = "true")]
    pub parallel: bool,
    #[arg(long = "d-k", default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    pub d_k: u32,
    #[arg(long = "d-v", default_value_t = 16)]
    pub d_v: u32,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: u32,
    #[arg(long = "d-k")]
    pub d_k: u32,
    #[arg(long = "d-v")]
    pub d_v: u32,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    match commands::run_argv(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Clap(e)) => {
            let _ = e.print();
            ExitCode::from(if e.use_stderr() { 2 } else { 0 })
        }
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
