use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix that must be invertible is not.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// An iterative solver stopped before meeting its tolerance.
    #[error("no convergence after {iterations} iterations (gradient norm {residual:.3e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        /// Last iterate reached by the solver.
        weights: Vec<f64>,
    },

    /// Environment generation could not satisfy its feasibility requirements.
    #[error("generation failed for seed {seed} after {attempts} attempts: {reason}")]
    Generation { seed: u64, attempts: usize, reason: String },

    /// Too many seeds of an experiment failed generation.
    #[error("aborted: {skipped} of {total} seeds skipped, above the tolerated rate {limit}")]
    Aborted { skipped: usize, total: usize, limit: f64 },

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file could not be parsed.
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// Input/output failure with path context.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
