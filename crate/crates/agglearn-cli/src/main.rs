//! Command-line frontend for the agglearn library.
//!
//! Every subcommand reads an optional `--config` file of key=value lines,
//! lets flags override it, and echoes the fully resolved configuration to
//! `config.kv` in its output directory, so a run can be reproduced from
//! its outputs alone. Exit codes: 0 on success, 2 for usage or config
//! errors, 4 when training diverges, 3 for any other data problem.

mod commands;
mod config;
mod io;
mod sweep;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agglearn::Error;

#[derive(Parser, Debug)]
#[command(
    name = "agglearn",
    version,
    about = "CTR models from noisy aggregated data"
)]
struct Cli {
    /// Worker threads for parallel sections; defaults to all cores.
    /// Outputs do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic granular dataset with known ground truth.
    Generate(commands::GenerateArgs),
    /// Shuffle a granular CSV and split it into named parts.
    Split(commands::SplitArgs),
    /// Turn granular data into a noisy aggregated report.
    Aggregate(commands::AggregateArgs),
    /// Train a model; the method decides which inputs it needs.
    #[command(subcommand)]
    Train(TrainMethod),
    /// Score a granular CSV with a saved model.
    Predict(commands::PredictArgs),
    /// Compute log-loss metrics for saved predictions.
    Evaluate(commands::EvaluateArgs),
    /// Run an experiment sweep over synthetic data.
    Sweep(sweep::SweepArgs),
}

#[derive(Subcommand, Debug)]
enum TrainMethod {
    /// Logistic regression fit directly to a noisy report, with the model
    /// side of the gradient estimated from an unlabeled pool.
    Agglogistic(commands::TrainAggArgs),
    /// Logistic regression over granular rows enriched with report CTRs.
    Enrich(commands::TrainEnrichArgs),
    /// Granular logistic regression on labeled rows, the privacy-free
    /// reference the aggregated methods are judged against.
    Skyline(commands::TrainSkylineArgs),
    /// Aggregated logistic with the pool replaced by fake rows sampled
    /// from the report's own marginals.
    Fake(commands::TrainFakeArgs),
    /// Constant predictor at the empirical positive rate.
    Dummy(commands::TrainDummyArgs),
}

fn dispatch(command: Command) -> agglearn::Result<()> {
    match command {
        Command::Generate(args) => commands::cmd_generate(args),
        Command::Split(args) => commands::cmd_split(args),
        Command::Aggregate(args) => commands::cmd_aggregate(args),
        Command::Train(TrainMethod::Agglogistic(args)) => commands::cmd_train_agglogistic(args),
        Command::Train(TrainMethod::Enrich(args)) => commands::cmd_train_enrich(args),
        Command::Train(TrainMethod::Skyline(args)) => commands::cmd_train_skyline(args),
        Command::Train(TrainMethod::Fake(args)) => commands::cmd_train_fake(args),
        Command::Train(TrainMethod::Dummy(args)) => commands::cmd_train_dummy(args),
        Command::Predict(args) => commands::cmd_predict(args),
        Command::Evaluate(args) => commands::cmd_evaluate(args),
        Command::Sweep(args) => sweep::cmd_sweep(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.workers {
        Some(workers) => match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(Error::InvalidArgument(format!(
                "cannot build a {workers}-thread worker pool: {e}"
            ))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidArgument(_) => 2,
                Error::Divergence { .. } => 4,
                _ => 3,
            })
        }
    }
}
