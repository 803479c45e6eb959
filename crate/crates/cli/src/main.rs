mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

/// Covariant quantum kernel experiments on an exact simulator.
#[derive(Debug, Parser)]
#[command(name = "covkernel", version)]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or import the dataset and write the train/test split.
    Datagen,
    /// Sweep the bit-flip tolerance and recommend one per register size.
    Calibrate,
    /// Align the fiducial state to the training labels.
    Align,
    /// Fit the multiclass SVC on the training kernel.
    Fit {
        /// Fit only the classical baseline.
        #[arg(long)]
        classical_only: bool,
    },
    /// Predict the test split with the fitted models.
    Predict {
        #[arg(long)]
        classical_only: bool,
    },
    /// Run the numerical theory checks.
    Verify {
        /// Drop the π factor from the closed-form kernel; its check must fail.
        #[arg(long)]
        negative_control: bool,
    },
    /// Collect stage outputs into report.json.
    Report,
}

fn run(cli: &Cli) -> error::CliResult<()> {
    let config = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Datagen => commands::datagen(&config),
        Command::Calibrate => commands::calibrate_cmd(&config),
        Command::Align => commands::align(&config),
        Command::Fit { classical_only } => commands::fit(&config, classical_only),
        Command::Predict { classical_only } => commands::predict(&config, classical_only),
        Command::Verify { negative_control } => commands::verify(&config, negative_control),
        Command::Report => commands::report(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
