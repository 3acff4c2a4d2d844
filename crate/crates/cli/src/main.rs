//! `influence`: train small classifiers, attribute their predictions to
//! training data, flag mislabeled examples, score attributions with LDS and
//! unlearn training points.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

mod commands;
mod context;
mod error;
mod manifest;
mod report;

use std::process::ExitCode;

use clap::Parser;

use crate::commands::Cli;
use crate::error::{CliError, CliResult};
use crate::manifest::Invocation;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args_os().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: Cli, raw: &[String]) -> CliResult<()> {
    let jobs = cli.jobs.map(|j| j as usize);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {jobs:?} workers: {e}")))?;
    pool.install(|| {
        let invocation = Invocation::from_argv(raw, jobs)?;
        commands::run(cli.command, invocation)
    })
}
