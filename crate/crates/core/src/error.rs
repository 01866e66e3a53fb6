use std::path::PathBuf;

/// Errors produced anywhere in the evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("raster is not binary: found value {value} at pixel ({col}, {row})")]
    NotBinary { col: usize, row: usize, value: f64 },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("georeference mismatch: {0}")]
    GeorefMismatch(String),

    #[error("infeasible synthetic placement: {0}")]
    InfeasiblePlacement(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NotBinary { .. } => "not_binary",
            Error::InvalidRaster(_) => "invalid_raster",
            Error::GeorefMismatch(_) => "georef_mismatch",
            Error::InfeasiblePlacement(_) => "infeasible_placement",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
