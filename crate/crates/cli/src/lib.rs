//! `xfpt` command-line harness.
//!
//! ```text
//! xfpt <exact|simulate|compare|diagnose|sweep> --config <file> [--key.path=value ...] --out <dir>
//! ```
//!
//! Exit codes: 0 success, 1 usage or config error (error JSON on standard
//! error), 2 failed statistical comparison.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Command, Outcome};
use crate::error::{CliError, CliResult};

/// Environment variable capping Monte Carlo worker threads.
pub const THREADS_ENV: &str = "XFPT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "xfpt",
    version,
    about = "Extreme first-passage statistics on hierarchical graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Exact distribution, tails and moments with the asymptotic law.
    Exact(Common),
    /// Monte Carlo trials.
    Simulate(Common),
    /// Exact vs asymptotic vs Monte Carlo, exit 2 on disagreement.
    Compare(Common),
    /// Entropic-function sweep over distances and regime classification.
    Diagnose(Common),
    /// Summary statistics over a grid of λ or N.
    Sweep(Common),
}

/// Splits `--dotted.path=value` overrides from the arguments clap parses.
fn split_overrides(args: Vec<OsString>) -> (Vec<OsString>, Vec<(String, String)>) {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    for arg in args {
        if let Some((key, value)) = arg
            .to_str()
            .and_then(|s| s.strip_prefix("--"))
            .and_then(|s| s.split_once('='))
        {
            if key != "config" && key != "out" {
                overrides.push((key.to_string(), value.to_string()));
                continue;
            }
        }
        rest.push(arg);
    }
    (rest, overrides)
}

fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got '{raw}'"
            ))),
        },
    }
}

fn execute(cli: Cli, overrides: &[(String, String)]) -> CliResult<Outcome> {
    let (command, common) = match cli.command {
        Sub::Exact(c) => (Command::Exact, c),
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Compare(c) => (Command::Compare, c),
        Sub::Diagnose(c) => (Command::Diagnose, c),
        Sub::Sweep(c) => (Command::Sweep, c),
    };
    let config = config::load(&common.config, overrides)?;
    let out = common
        .out
        .or_else(|| config.output.dir.clone())
        .ok_or_else(|| {
            CliError::Usage("no output directory: pass --out or set output.dir".into())
        })?;
    commands::run(command, &config, &out, threads_from_env()?)
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run_cli<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let (args, overrides) = split_overrides(args.into_iter().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            report(&CliError::Usage(e.to_string().trim_end().to_string()));
            return 1;
        }
    };
    match execute(cli, &overrides) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::ComparisonFailed) => 2,
        Err(e) => {
            report(&e);
            1
        }
    }
}

fn report(error: &CliError) {
    eprintln!("{}", error.to_json());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_split_from_flags() {
        let args = [
            "xfpt",
            "exact",
            "--config=c.json",
            "--mc.seed=7",
            "--out",
            "o",
            "--model.d=3",
        ]
        .map(OsString::from)
        .to_vec();
        let (rest, overrides) = split_overrides(args);
        assert_eq!(rest.len(), 5);
        assert_eq!(
            overrides,
            vec![
                ("mc.seed".into(), "7".into()),
                ("model.d".into(), "3".into())
            ]
        );
    }
}
