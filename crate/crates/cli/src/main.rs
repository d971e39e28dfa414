//! `nlmc <command> --config <path> --out <dir> [--set key=value]... [--workers N]`
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 when a run aborts
//! on a non-finite value or zero density, 1 for anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nlmc_core::config::{load_config, parse_override};
use nlmc_core::experiment::{execute, Command};
use nlmc_core::Error;

#[derive(Debug, Parser)]
#[command(name = "nlmc", version, about = "Nonlinear MCMC experiments: run, repeats, table1, baseline_compare, diagnostics")]
struct Args {
    /// One of run, repeats, table1, baseline_compare, diagnostics.
    command: String,

    /// Run configuration (flat key = value file).
    #[arg(long)]
    config: PathBuf,

    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,

    /// Override a configuration key, e.g. `--set epsilon=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads for repeats and grid cells (default: all cores).
    /// Results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_config() => 2,
        Error::Numeric { .. } | Error::Domain(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match dispatch(&args) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nlmc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(args: &Args) -> Result<String, Error> {
    let command: Command = args.command.parse()?;
    let overrides = args.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    let config = load_config(&args.config, &overrides)?;
    let go = || execute(command, &config, &args.out).map(|o| o.summary);
    match args.workers {
        None => go(),
        Some(0) => Err(Error::Range { key: "--workers".into(), value: "0".into(), bounds: "[1, inf)".into() }),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Io(format!("thread pool: {e}")))?
            .install(go),
    }
}
