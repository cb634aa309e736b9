//! `gcec`: train, evaluate and inspect pixel-grid graph classifiers.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime
//! error.

mod args;
mod commands;

use std::process::ExitCode;

use gcec::{DatasetError, ModelError, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Clap(clap::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Clap(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::Graph(_) => CliError::Config(e.to_string()),
            ModelError::Checkpoint { .. } | ModelError::Io { .. } => CliError::Data(e.to_string()),
            ModelError::Tensor(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::EmptyDataset | TrainError::LabelOutOfRange { .. } | TrainError::Mismatch(_) => {
                CliError::Data(e.to_string())
            }
            TrainError::Tensor(_) | TrainError::Sink(_) => CliError::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match args::parse(std::env::args().collect()) {
        Ok(cli) => cli,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
        Err(e) => {
            eprintln!("gcec: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gcec: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
