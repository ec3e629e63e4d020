mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{evaluate, infer, predict, replay, simulate, summary, topics, train};

#[derive(Parser)]
#[command(name = "mixtopic", version, about = "Topic models for sparse patient records with informative lab missingness")]
struct Cli {
    /// Worker threads. 0 uses every available core.
    #[arg(long, global = true, env = "MIXTOPIC_THREADS", default_value_t = 0)]
    threads: usize,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a topic model to a corpus.
    Train(train::TrainArgs),
    /// Draw a synthetic corpus with known parameters.
    Simulate(simulate::SimulateArgs),
    /// Infer topic mixtures for patients under a trained model.
    Infer(infer::InferArgs),
    /// Cross-validate topic counts, or score a trained model on held-out data.
    Evaluate(evaluate::EvaluateArgs),
    /// Predict a binary outcome from topic mixtures with an L1 model.
    Predict(predict::PredictArgs),
    /// Report the top features and labs of each topic.
    Topics(topics::TopicsArgs),
    /// Print corpus statistics.
    Summary(summary::SummaryArgs),
    /// Re-run a recorded command and check its outputs match.
    Replay(replay::ReplayArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err
        .chain()
        .any(|e| e.downcast_ref::<mixtopic::Error>().is_some_and(|e| e.is_usage()));
    if usage {
        2
    } else {
        1
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

    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(1);
    }

    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Topics(a) => topics::run(a),
        Command::Summary(a) => summary::run(a),
        Command::Replay(a) => replay::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
