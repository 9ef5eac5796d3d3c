use std::path::PathBuf;

use thiserror::Error;

use crate::kernel_qp::DualSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("solver did not converge after {iterations} iterations (violation {violation:e})")]
    Convergence { iterations: usize, violation: f64 },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("cannot parse `{value}` at row {row}, column `{column}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },

    #[error("unsupported archive version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 solver non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Convergence { .. } => 4,
            _ => 3,
        }
    }
}

/// Failure modes of the dual solver.
#[derive(Debug, Error)]
pub enum SolveError<F> {
    #[error("degenerate task: {0}")]
    Degenerate(String),

    /// Iteration budget exhausted; carries the best iterate reached.
    #[error("no convergence within the iteration budget")]
    NotConverged { best: Box<DualSolution<F>> },
}

impl<F: crate::Scalar> From<SolveError<F>> for Error {
    fn from(err: SolveError<F>) -> Self {
        match err {
            SolveError::Degenerate(msg) => Error::DegenerateTask(msg),
            SolveError::NotConverged { best } => Error::Convergence {
                iterations: best.iterations,
                violation: best.max_kkt_violation.as_f64(),
            },
        }
    }
}
