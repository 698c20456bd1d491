//! `tokprune`: train, diagnose, compress and evaluate from the command line.

mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use config::Cli;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }
}

impl From<tokprune::Error> for Failure {
    fn from(e: tokprune::Error) -> Self {
        match e {
            tokprune::Error::Config(msg) => Failure::Usage(msg),
            e if e.is_data_error() => Failure::Data(e.into()),
            e => Failure::Runtime(e.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Data(e) | Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
