//! Command-line front end for the `hive-core` estimators.
//!
//! Subcommands: `fit`, `select-k`, `tune` and `simulate`. Exit codes are 0
//! on success, 2 for usage errors, 3 for data errors and 4 for
//! non-convergence under `--strict`.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;

use std::ffi::OsString;

use clap::Parser;

pub use error::{CliError, CliResult};

use args::{Cli, Command};

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::fit::run(a),
        Command::SelectK(a) => commands::select_k::run(a),
        Command::Tune(a) => commands::tune::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
