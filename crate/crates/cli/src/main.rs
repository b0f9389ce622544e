//! Command-line front end: geometry -> participation -> synthetic data ->
//! fit -> report.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Settings};

/// Exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] surfloss::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn status(&self) -> Status {
        use surfloss::Error as E;
        match self {
            CliError::Usage(_) => Status::Usage,
            CliError::Data(_) | CliError::Io { .. } => Status::Data,
            CliError::Numerical(_) => Status::Numerical,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) => Status::Usage,
                E::Singular(_) | E::NonConvergence { .. } | E::Mesh(_) => Status::Numerical,
                _ => Status::Data,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                Status::Usage as u8
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let settings = match Settings::resolve(&cli.global) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.status() as u8);
        }
    };
    env_logger::Builder::new()
        .filter_level(if settings.quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Info
        })
        .format_timestamp(None)
        .format_target(false)
        .parse_env("SURFLOSS_LOG")
        .init();
    match commands::run(&cli.command, &settings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status() as u8)
        }
    }
}
