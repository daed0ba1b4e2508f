//! `vsumm`: synthetic data, shot segmentation, scorer training,
//! summarization, split-based evaluation and plots from one binary.
//!
//! Every option can also come from a JSON file passed with `--config`,
//! keyed by the long flag name (`{"lr": 0.01, "n-videos": 20}`). Flags
//! win over the file, the file wins over built-in defaults.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod config;
mod plot;

use std::collections::BTreeSet;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use commands::{EvaluateArgs, PlotArgs, SegmentArgs, SummarizeArgs, SynthArgs, TrainArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] vsumm::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vsumm", version, about = "Train and evaluate reinforcement-learning keyframe summarizers")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it to disk.
    Synth(SynthArgs),
    /// Split every video of a dataset into shots.
    Segment(SegmentArgs),
    /// Train a frame scorer and save a checkpoint plus a JSON-lines log.
    Train(TrainArgs),
    /// Build budgeted summaries with a trained checkpoint.
    Summarize(SummarizeArgs),
    /// Run the repeated-split experiment, or score existing summaries.
    Evaluate(EvaluateArgs),
    /// Draw score curves and F-vs-budget bars as SVG.
    Plot(PlotArgs),
}

/// Long flag names of a subcommand, which double as config-file keys.
pub fn config_keys(subcommand: &str) -> BTreeSet<String> {
    Cli::command()
        .find_subcommand(subcommand)
        .map(|c| {
            c.get_arguments()
                .filter_map(|a| a.get_long())
                .filter(|&l| l != "config")
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Segment(a) => commands::segment(&a),
        Command::Train(a) => commands::train(&a),
        Command::Summarize(a) => commands::summarize(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Plot(a) => commands::plot(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
