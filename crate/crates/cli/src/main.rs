//! `poro`: reference solves, network training, parameter sweeps and coefficient inversion
//! driven by one JSON configuration file.

mod commands;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{CliError, SweepParam};

#[derive(Debug, Parser)]
#[command(name = "poro", version, about = "Coupled pore-air/pore-water consolidation: reference solver and segmented network training")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the configuration.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Std,
    Lbc,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference reference solution on the configured grid.
    SolveFem,
    /// Train a single-window or segmented network and compare it with the reference solution.
    Train {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// One training run per value of a parameter, with an aggregated metrics table.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Identify coefficients from observations (a `z,t,ua,uw` CSV, or reference-solver samples).
    Invert {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Relative standard deviation of multiplicative Gaussian noise added to the data.
        #[arg(long)]
        noise: Option<f64>,
        /// Comma-separated free coefficients (cva, cvw, ca, cw).
        #[arg(long)]
        free: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Usage("--config FILE is required".into()))?;
    let run = commands::load(&path, cli.output)?;
    logging::init(&run.out)?;
    match cli.command {
        Command::SolveFem => commands::solve_fem(&run),
        Command::Train { mode } => commands::train(&run, mode == Mode::Std),
        Command::Sweep { param, values } => commands::sweep(&run, param, &values),
        Command::Invert { data, noise, free } => commands::invert(&run, data.as_deref(), noise, free.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
