//! Command line entry point. Exit status: 0 on success, 2 when the solution
//! blew up mid-run, 1 for any other error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nch::cli;
use nch::harness::StudyAxis;

#[derive(Parser)]
#[command(
    name = "nch",
    version,
    about = "Pseudo-spectral solver for the nonlocal Cahn-Hilliard equation on periodic 2-D domains"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured problem, streaming diagnostics and snapshots
    Run {
        /// JSON configuration file
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the refinement study along one axis and report observed orders
    Converge {
        /// JSON configuration file with the matching study section
        #[arg(long)]
        config: PathBuf,
        /// Which parameter is refined
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Output directory, created if missing
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads for the per-level solves
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Exercise every library invariant on a small grid (at least 8x8)
    Check {
        #[arg(long, default_value_t = 8)]
        nx: usize,
        #[arg(long, default_value_t = 8)]
        ny: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Time,
    Space,
}

impl From<AxisArg> for StudyAxis {
    fn from(axis: AxisArg) -> Self {
        match axis {
            AxisArg::Time => StudyAxis::Time,
            AxisArg::Space => StudyAxis::Space,
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            use clap::error::ErrorKind;
            let usage_only =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(if usage_only { 0 } else { 1 });
        }
    };
    let outcome = match args.command {
        Command::Run { config, out } => cli::cmd_run(&config, &out),
        Command::Converge { config, axis, out, jobs } => {
            cli::cmd_converge(&config, axis.into(), &out, jobs)
        }
        Command::Check { nx, ny } => cli::cmd_check(nx, ny),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
