//! `ghostlite`: train, evaluate and analyze ghost-feature CNNs for skin
//! lesion classification.

mod commands;
mod config;
mod failure;
mod output;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Exit codes: 0 success, 1 failed check, 2 configuration error, 3 data
/// error, 4 numeric failure during training.
#[derive(Parser, Debug)]
#[command(name = "ghostlite", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus JSON history.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(commands::eval::EvalArgs),
    /// Print ranked class probabilities for one image as JSON.
    Predict(commands::predict::PredictArgs),
    /// Count multiply-accumulates and parameters per layer.
    Flops(commands::flops::FlopsArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Write SMOTE samples of one class with their provenance.
    SmotePreview(commands::smote::SmoteArgs),
    /// Generate the procedural lesion dataset.
    Synth(commands::synth::SynthArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Predict(a) => commands::predict::run(a),
        Command::Flops(a) => commands::flops::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
        Command::SmotePreview(a) => commands::smote::run(a),
        Command::Synth(a) => commands::synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
