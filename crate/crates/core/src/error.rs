use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error at {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("iteration {iteration}, stage `{stage}`: {source}")]
    Stage {
        iteration: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_stage(self, iteration: usize, stage: &'static str) -> Self {
        Error::Stage { iteration, stage, source: Box::new(self) }
    }

    /// True when the root cause is a linear-solver failure.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::Solver(_) => true,
            Error::Stage { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }

    /// True when the root cause is a configuration problem.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::Geometry(_) => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
