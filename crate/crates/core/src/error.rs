use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("subsample error: {0}")]
    Subsample(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("degenerate concept: {0}")]
    DegenerateConcept(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("INLP probe diverged at iteration {iteration}: {source}")]
    ProbeDivergence {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate vector: norm {0:e} below 1e-12")]
    DegenerateVector(f64),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("fairness undefined: {0}")]
    UndefinedFairness(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

/// Broad failure class, used by the command line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Unsupported(_) => ErrorClass::Usage,
            Error::NonFinite(_)
            | Error::NotPsd(_)
            | Error::Divergence { .. }
            | Error::ProbeDivergence { .. }
            | Error::Domain(_)
            | Error::DegenerateVector(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
