use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("wavelength axis error: {0}")]
    Axis(String),
    #[error("index out of bounds: {0}")]
    Index(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("reference digital number is zero in band {band}")]
    DivisionDomain { band: usize },
    #[error("degenerate calibration in band {band}: DC equals DC0")]
    DegenerateCalibration { band: usize },
    #[error("wavelength grid is not uniformly spaced: {0}")]
    Grid(String),
    #[error("insufficient spectral coverage: {0}")]
    Coverage(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("model configuration error: {0}")]
    Config(String),
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("I/O error on {path}: {source}")]
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

    /// True for errors caused by non-finite values or failed numerics rather
    /// than bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric(_) | Error::DivisionDomain { .. } | Error::DegenerateCalibration { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
