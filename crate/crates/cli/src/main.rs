//! `storytune` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 numerical divergence.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "storytune", version, about = "Weak-to-strong instruction tuning for story generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus as train/valid/test JSONL plus a manifest.
    SynthData(SynthArgs),
    /// Run the training curriculum and write checkpoints and logs.
    Train(TrainArgs),
    /// Generate a story for one instruction.
    Generate(GenerateArgs),
    /// Score a checkpoint on a JSONL file.
    Evaluate(EvaluateArgs),
    /// Merge evaluation CSVs into one wide table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of examples (weak and strong together).
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    protagonists: Option<usize>,
    #[arg(long)]
    fears: Option<usize>,
    #[arg(long)]
    helpers: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory with train.jsonl (and optionally valid.jsonl), or a single
    /// training JSONL file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: PathBuf,
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["sequential", "joint"])]
    mode: Option<String>,
    #[arg(long)]
    pretrain_steps: Option<usize>,
    #[arg(long)]
    weak_steps: Option<usize>,
    #[arg(long)]
    strong_steps: Option<usize>,
    #[arg(long)]
    joint_steps: Option<usize>,
    /// Learning rate for every phase.
    #[arg(long)]
    lr: Option<f32>,
    /// Batch size for every phase.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    instruction: String,
    /// Defaults to the room left in the context after the instruction.
    #[arg(long = "max-new")]
    max_new: Option<usize>,
    #[arg(long, default_value = "greedy", value_parser = ["greedy", "sample"])]
    mode: String,
    #[arg(long, default_value_t = 1.0)]
    temperature: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print each token and its log-probability to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Row label; defaults to the checkpoint file stem.
    #[arg(long)]
    label: Option<String>,
    #[arg(long = "max-new", default_value_t = 64)]
    max_new: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation CSVs to merge.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the merged CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Train(a) => commands::train(a),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
