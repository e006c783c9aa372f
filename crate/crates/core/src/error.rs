use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("{what}: expected {expected} values, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("gamut is empty for grid step {0}")]
    EmptyGamut(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("smoothed prior has a zero entry at bin {0}; lambda = 0 weights are undefined")]
    ZeroPrior(usize),

    #[error("malformed PPM: {0}")]
    MalformedPpm(String),

    #[error("unsupported PPM variant {0} (only binary P6 is accepted)")]
    UnsupportedPpm(String),

    #[error("malformed priors file (line {line}): {reason}")]
    MalformedPriors { line: usize, reason: String },

    #[error("invalid priors: {0}")]
    InvalidPriors(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
