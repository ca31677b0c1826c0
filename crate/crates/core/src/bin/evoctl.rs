use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use evoctl::error::Error;
use evoctl::scenario::load_scenario;
use evoctl::workbench::{run, Command, RunStatus};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Subcommand {
    /// Evolution-family axioms, Gronwall bound and kernel/oracle agreement
    Verify,
    /// Gramian assembly and regularized decay table
    Gramian,
    /// One controlled mild solution at the scenario's `a`
    Solve,
    /// Terminal error along the scenario's `a_list`
    Sweep,
    /// Brute-force cross-check of kernel, Gramian and trajectory
    Oracle,
}

impl From<Subcommand> for Command {
    fn from(s: Subcommand) -> Self {
        match s {
            Subcommand::Verify => Command::Verify,
            Subcommand::Gramian => Command::Gramian,
            Subcommand::Solve => Command::Solve,
            Subcommand::Sweep => Command::Sweep,
            Subcommand::Oracle => Command::Oracle,
        }
    }
}

/// Approximate controllability experiments on truncated spectral scenarios.
///
/// Exit status: 0 success, 1 runtime failure, 2 invalid scenario or input,
/// 3 fixed-point iteration did not converge, 4 a verification check failed.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// Scenario file (TOML)
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for CSV files and report.json
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result =
        load_scenario(&cli.scenario).and_then(|s| run(cli.subcommand.into(), &s, &cli.out));
    match result {
        Ok(report) => {
            println!("{}", report.summary());
            match report.status {
                RunStatus::Ok => ExitCode::SUCCESS,
                RunStatus::NotConverged => ExitCode::from(3),
                RunStatus::CheckFailed => ExitCode::from(4),
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Scenario(_)
                | Error::InvalidInput(_)
                | Error::OffGrid { .. }
                | Error::DimensionMismatch { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
