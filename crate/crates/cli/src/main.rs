use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::ScenarioConfig;
use output::{Format, Report};

const EXIT_USAGE: u8 = 1;

/// Ground states of nonlocal Schrödinger operators on p-adic spaces.
#[derive(Debug, Parser)]
#[command(name = "padic-ground", version, after_help = ENV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Write `<command>.json` and one CSV per table into this directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the `seed` key of the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// What goes to stdout: the JSON report or its primary CSV table.
    #[arg(long, value_enum, default_value = "json", global = true)]
    format: Format,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Tabulate `ã(p^N)` and `1 - ã(p^N)`.
    Fourier,
    /// Green kernel `G_λ` on the grid shells, and `r(Q_λ)` if a potential is set.
    Kernel,
    /// Solve `r(Q_λ) = 1` for the top eigenvalue and ground state.
    Groundstate,
    /// Recurrence criterion series, integral test and exact return series.
    Recurrence,
    /// Monte Carlo walk with exact return probabilities alongside.
    Walk,
    /// Run the invariant checks; exits 3 if any fails.
    Verify,
}

const ENV_HELP: &str = "\
Exit codes: 0 success, 1 usage or config error, 2 no ground state, 3 check failure.

Environment overrides (applied after the config file):
  PADIC_GROUND_POWER_TOL, PADIC_GROUND_POWER_MAX_ITER, PADIC_GROUND_BISECTION_TOL,
  PADIC_GROUND_LAMBDA_FLOOR, PADIC_GROUND_KERNEL_TAIL_TOL, PADIC_GROUND_EXTERIOR_SHELLS";

fn run(cli: &Cli) -> Result<Report> {
    let Some(path) = &cli.config else {
        anyhow::bail!("--config PATH is required");
    };
    let config = ScenarioConfig::load(path)?;
    let seed = cli.seed.unwrap_or(config.seed);
    match cli.command {
        Command::Fourier => commands::fourier(&config),
        Command::Kernel => commands::kernel(&config),
        Command::Groundstate => commands::groundstate(&config),
        Command::Recurrence => commands::recurrence(&config),
        Command::Walk => commands::walk(&config, seed),
        Command::Verify => commands::verify(&config, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let written = match &cli.out {
        Some(dir) => report.write_dir(dir),
        None => Ok(()),
    }
    .and_then(|()| {
        let mut stdout = std::io::stdout().lock();
        report.print(cli.format, &mut stdout)?;
        Ok(stdout.flush()?)
    });
    if let Err(e) = written {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    ExitCode::from(report.exit)
}
