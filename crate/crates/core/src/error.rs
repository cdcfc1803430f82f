use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum GenError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("input error at line {line}: {msg}")]
    InputLine { line: usize, msg: String },
    #[error("input error: {0}")]
    Input(String),
    #[error("{path}: {msg}")]
    File { path: PathBuf, msg: String },
    #[error("node {0} has degree zero and no self-loop")]
    DegenerateDegree(usize),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("node {node} is not within {k_max} hops of node {origin}")]
    OutOfField {
        origin: usize,
        node: usize,
        k_max: usize,
    },
    #[error("size guard exceeded: {0}")]
    Size(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GenError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GenError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        GenError::File {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad user input (files, flags, configs)
    /// rather than by an engine failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            GenError::InputLine { .. }
                | GenError::Input(_)
                | GenError::File { .. }
                | GenError::Io { .. }
                | GenError::Precondition(_)
                | GenError::DegenerateDegree(_)
                | GenError::OutOfField { .. }
                | GenError::Size(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, GenError>;
