use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("optimization error: {0}")]
    Optimization(String),

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("ISO {iso} outside calibrated range [{min}, {max}]")]
    IsoRange { iso: f64, min: f64, max: f64 },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    /// True for errors caused by bad user input or configuration rather than
    /// runtime failures. The CLI maps these to a distinct exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Argument(_) | Error::IsoRange { .. })
    }
}
