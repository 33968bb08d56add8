//! Command implementations behind the `pairlive` binary.
//!
//! Each `cmd_*` function takes a resolved [`RunConfig`] plus paths, writes its
//! artifacts and returns a summary, so the commands can be driven from tests
//! as well as from the command line.

pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod plot;

use std::path::PathBuf;

use pairlive_core::error::ErrorKind;
use thiserror::Error;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_filter, cmd_sweep, cmd_synth, cmd_train, DataPaths, EvalInput,
    DEFAULT_TAU_GRID,
};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pairlive_core::Error),
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("training aborted: {0}")]
    Aborted(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 2 for configuration problems, 3 for bad input data, 4 for numerical
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
                ErrorKind::Io => 1,
            },
            CliError::Csv { source, .. } if source.is_io_error() => 1,
            CliError::Csv { .. } => 3,
            CliError::Usage(_) => 2,
            CliError::Aborted(_) => 4,
        }
    }
}
