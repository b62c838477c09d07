//! `tomoplan` command-line interface.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure
//! (singular statistics, non-convergence).

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;

use args::{Cli, Command, ReplayArgs};
use commands::UsageError;
use manifest::{load_manifest, CommandRecord, TOOL};

const THREADS_VAR: &str = "TOMOPLAN_THREADS";

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| UsageError(format!("{THREADS_VAR} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure thread pool")
}

fn replay(args: ReplayArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&args.from)?;
    if manifest.tool != TOOL {
        bail!("{} was not written by {TOOL}", args.from.display());
    }
    if manifest.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: recorded with {TOOL} {}, replaying with {}",
            manifest.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    manifest.check_inputs()?;
    match manifest.command {
        CommandRecord::Validate(mut a) => {
            a.out = args.out;
            commands::validate(a)
        }
        CommandRecord::Design(mut a) => {
            a.out = args.out;
            commands::design(a)
        }
        CommandRecord::Simulate(mut a) => {
            a.out = args.out.ok_or_else(|| UsageError("replaying simulate requires --out <prefix>".into()))?;
            commands::simulate(a)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Design(a) => commands::design(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Replay(a) => replay(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<tomoplan::Error>())
        .any(tomoplan::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
