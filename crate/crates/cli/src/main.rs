mod bench;
mod config;
mod error;
mod estimate;
mod eval;
mod infer;
mod synth;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::{Failure, EXIT_USAGE};

/// Align action transcripts to frame-wise class probabilities.
#[derive(Debug, Parser)]
#[command(name = "segalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode segment lengths for one video.
    Infer(infer::InferArgs),
    /// Score a predicted segmentation against ground truth.
    Eval(eval::EvalArgs),
    /// Write synthetic instances.
    Synth(synth::SynthArgs),
    /// Sweep a parameter and write a CSV of accuracy and timing.
    Bench(bench::BenchArgs),
    /// Estimate per-class mean lengths from ground-truth files.
    EstimateLengths(estimate::EstimateArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            let failure = Failure::usage(e.to_string().trim().to_string());
            eprintln!("{}", failure.to_json());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let outcome = match cli.command {
        Command::Infer(args) => infer::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Synth(args) => synth::run(args),
        Command::Bench(args) => bench::run(args),
        Command::EstimateLengths(args) => estimate::run(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.to_json());
            ExitCode::from(failure.code)
        }
    }
}
