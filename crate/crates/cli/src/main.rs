mod args;
mod bench;
mod commands;
mod plot;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Exit status classes: results that fail a check, and usage or IO problems.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Failed(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] hmcvol::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use hmcvol::Error as E;
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Parse(_) | E::Validation(_) | E::Dimension(_) | E::Parameter(_) => 2,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sample(a) => commands::sample(a),
        Command::Volume(a) => commands::volume(a),
        Command::Verify(a) => commands::verify(a),
        Command::Bench(a) => bench::run(a),
        Command::Plot(a) => plot::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
