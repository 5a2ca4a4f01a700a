//! `swgame`: batch front end for the switching-game solvers.
//!
//! ```text
//! swgame validate --config run.json
//! swgame solve    --config run.json --out results --format csv --format bin
//! swgame sweep    --config run.json
//! swgame check    --config run.json --seed 7 --threads 4
//! ```
//!
//! Exit status: 0 on success, 1 when a validator, solver or cross-check
//! fails, 2 on usage, I/O or parse errors.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Options;
use config::Format;
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "swgame", version, about = "Solvers for switching games with jumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the model assumptions of the problem.
    Validate(Flags),
    /// Solve one system and write value surfaces and a report.
    Solve(Flags),
    /// Solve the penalized system over an (n, m) lattice.
    Sweep(Flags),
    /// Compare against the dense oracle and a Monte Carlo estimate.
    Check(Flags),
}

#[derive(Debug, clap::Args)]
struct Flags {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output formats; repeat for several.
    #[arg(long, value_enum)]
    format: Vec<Format>,
    /// Solve even when the terminal data are inconsistent.
    #[arg(long)]
    override_a4: bool,
    /// Perturb one oracle stencil weight (negative control for `check`).
    #[arg(long, hide = true)]
    debug_perturb_node: Option<usize>,
}

fn set_threads(threads: Option<usize>) -> CliResult<()> {
    let Some(n) = threads else {
        return Ok(());
    };
    if n == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let (flags, cmd): (&Flags, fn(&Options) -> CliResult<()>) = match &cli.command {
        Command::Validate(f) => (f, commands::validate),
        Command::Solve(f) => (f, commands::solve),
        Command::Sweep(f) => (f, commands::sweep),
        Command::Check(f) => (f, commands::check),
    };
    set_threads(flags.threads)?;
    cmd(&Options {
        config: flags.config.clone(),
        out: flags.out.clone(),
        seed: flags.seed,
        formats: flags.format.clone(),
        override_a4: flags.override_a4,
        perturb_node: flags.debug_perturb_node,
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
