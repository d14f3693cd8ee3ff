use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EmpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EmpError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid attention/pooling mask: {0}")]
    InvalidMask(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported schema `{found}` (expected `{expected}`)")]
    Schema { found: String, expected: String },

    #[error("scenario `{scenario}`: {msg}")]
    Invariant { scenario: String, msg: String },

    #[error("invalid scenario `{scenario}`: {msg}")]
    InvalidScenario { scenario: String, msg: String },

    #[error("degenerate polyline: {0}")]
    DegeneratePolyline(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parameter `{path}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        path: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("training diverged at step {step}: non-finite loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("need at least {needed} scenarios, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl EmpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EmpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        EmpError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
