use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cssca_cli::{compare, config, run};

#[derive(Parser)]
#[command(name = "cssca", version, about = "Stochastic solver runner for expectation-constrained problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the run described by a TOML config and write its trace.
    Run {
        config: PathBuf,
        /// Replace the config's sampler seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the config's iteration budget.
        #[arg(long)]
        iterations: Option<usize>,
        /// Replace the config's trace path; the sidecar moves next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize and diff two or more finished traces.
    Compare {
        /// Trace CSV paths; each needs its JSON sidecar next to it.
        #[arg(required = true, num_args = 2..)]
        traces: Vec<PathBuf>,
        /// Constraint level counted as feasible for time-to-threshold.
        #[arg(long, default_value_t = 1e-2)]
        threshold: f64,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config: path, seed, iterations, out } => {
            let mut spec = config::load(&path)?;
            config::Overrides { seed, iterations, out }.apply(&mut spec);
            let outcome = run::execute(&spec)?;
            println!("{}", run::summary(&outcome));
            Ok(())
        }
        Command::Compare { traces, threshold } => {
            print!("{}", compare::compare(&traces, threshold)?);
            Ok(())
        }
    }
}
