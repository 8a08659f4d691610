use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;

use config::RunConfig;

/// Chaotic-map reservoir classifier for MNIST digits.
#[derive(Debug, Parser)]
#[command(name = "lognet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML configuration file; repeat to layer files, later ones win.
    #[arg(long, short)]
    config: Vec<PathBuf>,
    /// Override one configuration key, e.g. `--set reservoir.params.a1=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search map parameters with the particle swarm.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Continue from `checkpoint.json` in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train on the full training set and evaluate on the test set.
    Train(Common),
    /// Bifurcation, Poincaré, entropy and entropy/accuracy tables over a parameter sweep.
    Analyze(Common),
    /// Weight-storage footprint of a saved model.
    Report {
        #[command(flatten)]
        common: Common,
        /// Model file; defaults to the configured model path.
        model: Option<PathBuf>,
    },
    /// Accuracy table over fill methods and architectures.
    Grid(Common),
    /// Print the resolved configuration.
    Config(Common),
}

fn load(common: &Common) -> Result<RunConfig, error::CliError> {
    RunConfig::load(&common.config, &common.overrides)
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    match cli.command {
        Command::Optimize { common, resume } => commands::optimize(load(&common)?, resume),
        Command::Train(common) => commands::train(load(&common)?),
        Command::Analyze(common) => commands::analyze(load(&common)?),
        Command::Report { common, model } => commands::report(load(&common)?, model),
        Command::Grid(common) => commands::grid(load(&common)?),
        Command::Config(common) => {
            print!("{}", load(&common)?.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
