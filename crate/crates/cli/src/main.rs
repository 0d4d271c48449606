//! `phase-deblur`: blind motion deblurring from the command line.
//!
//! Results go to standard output as JSON, diagnostics to standard error.
//! Exit codes: 0 success, 1 other failures, 2 I/O or usage errors,
//! 3 degenerate input, 4 dimension mismatch.

mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use phase_deblur::error::DeblurError;

use crate::commands::Cli;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_DEGENERATE: u8 = 3;
pub const EXIT_DIMENSIONS: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<DeblurError>() {
            return match e {
                DeblurError::Io(_) | DeblurError::Image(_) | DeblurError::Parse(_) => EXIT_IO,
                DeblurError::Degenerate(_) => EXIT_DEGENERATE,
                DeblurError::DimensionMismatch(_) => EXIT_DIMENSIONS,
                _ => EXIT_FAILURE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
