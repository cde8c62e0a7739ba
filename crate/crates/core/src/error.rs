use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("poisson right-hand side has non-zero mean {mean:e} (max |rhs| = {max_abs:e})")]
    Unsolvable { mean: f64, max_abs: f64 },

    #[error("non-finite values after step {step}")]
    BlowUp { step: usize },

    #[error("loss is not a finite scalar: {0}")]
    Loss(String),

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("corrupt file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("trajectory of {len} snapshots is too short for chunks of {steps} steps")]
    TooShort { len: usize, steps: usize },

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Validation errors are the user's fault; everything else is a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Grid(_) | Error::ParamShape { .. } | Error::TooShort { .. }
        )
    }
}
