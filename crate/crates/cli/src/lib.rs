//! Command-line front end: argument parsing, config-file resolution,
//! run directories with manifests, and the six subcommands.
//!
//! Exit codes: `0` success, `1` validation error (bad flags, config,
//! or input data), `2` runtime error (I/O, divergence, numerics).

use clap::error::ErrorKind;
use clap::Parser;
use std::ffi::OsString;

pub mod args;
pub mod commands;
pub mod config;
pub mod inputs;
pub mod runs;

use graphfill::Error;

/// Classify an engine error for the process exit code. Everything the
/// user could have prevented by fixing flags, config, or input files is
/// a validation error; failures that arise while the run executes are
/// runtime errors.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Parameter { .. }
        | Error::Config(_)
        | Error::Contract(_)
        | Error::Parse { .. }
        | Error::Schema(_)
        | Error::Split(_)
        | Error::Ingestion(_)
        | Error::UnknownNode { .. }
        | Error::Dimension { .. } => 1,
        Error::NumericDomain { .. }
        | Error::StaleTape(_)
        | Error::Sampling(_)
        | Error::Undefined { .. }
        | Error::Io { .. }
        | Error::Diverged { .. } => 2,
    }
}

/// Parse arguments, dispatch, and translate the outcome into an exit
/// code. This is the whole binary; `main` only calls it.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();

    let cli = match args::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 1;
        }
    };

    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
