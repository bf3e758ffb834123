mod commands;
mod config;
mod error;
mod manifest;
mod solve;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, ReasonArgs, SynthArgs, TrainArgs};

/// Deictic object retrieval over scene graphs by differentiable forward reasoning.
#[derive(Debug, Parser)]
#[command(name = "deixis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find the objects a prompt refers to in each scene graph.
    Reason(ReasonArgs),
    /// Generate a DeiVG or DeiCLEVR dataset.
    Synth(SynthArgs),
    /// Learn merge weights for a mixture of scene-graph sources.
    Train(TrainArgs),
    /// Score predictions (or the template pipeline) with box-level mAP.
    Eval(EvalArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Reason(a) => commands::reason(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
