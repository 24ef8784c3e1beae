use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column count mismatch: left has {left}, right has {right}")]
    ColumnMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("SVD did not converge on a {rows}x{cols} matrix")]
    ConvergenceFailure { rows: usize, cols: usize },

    #[error("matrix contains non-finite entries")]
    NonFiniteMatrix,

    #[error("negative entry {value} at ({i}, {j}, {k})")]
    NegativeInput {
        i: usize,
        j: usize,
        k: usize,
        value: f64,
    },

    #[error("non-finite value while updating {factor} at iteration {iteration}")]
    NonFiniteEncountered {
        factor: &'static str,
        iteration: usize,
    },

    #[error("cache does not match parameters: {0}")]
    StaleCache(String),

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("series of length {len} too short (need more than {required})")]
    SeriesTooShort { len: usize, required: usize },

    #[error("extended diagonals disagree with the base model at step {step}")]
    HistoryMismatch { step: usize },

    #[error("no forecast steps to reconstruct")]
    NoForecast,

    #[error("no events left after windowing and filtering")]
    EmptyAfterFilter,

    #[error("negative event value {value} on line {line}")]
    NegativeValue { line: usize, value: f64 },

    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty series")]
    EmptySeries,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
