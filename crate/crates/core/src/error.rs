use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A custom VJP rule returned cotangents inconsistent with its inputs.
    #[error("structural error in `{op}`: {msg}")]
    Structural { op: String, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("element {element} inverted (det F = {det_f:e})")]
    ElementInversion { element: usize, det_f: f64 },

    #[error("Newton iteration did not converge in {iterations} iterations (residual history {history:?})")]
    NonConvergence { iterations: usize, history: Vec<f64> },

    #[error("load step {step}: {source}")]
    LoadStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("design stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
