use std::io;

use disdca::comm::CommError;
use disdca::data::DataError;
use disdca::solver::SolverError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("bound violated: {0}")]
    Bound(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Transport(_) => 4,
            CliError::Numerical(_) => 5,
            CliError::Bound(_) => 6,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CommError> for CliError {
    fn from(e: CommError) -> Self {
        CliError::Transport(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Partition { .. } => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        let msg = e.to_string();
        match e {
            SolverError::Config(_) | SolverError::UnsupportedMode(_) => CliError::Config(msg),
            SolverError::Comm(_) => CliError::Transport(msg),
            SolverError::Trace(_) => CliError::Io(msg),
            SolverError::Model(_)
            | SolverError::Objective(_)
            | SolverError::NonFinite { .. }
            | SolverError::ReferenceNotConverged { .. } => CliError::Numerical(msg),
        }
    }
}
