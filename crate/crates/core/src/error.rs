use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the lighting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies at or behind the camera plane (z = {z})")]
    BehindCamera { z: f64 },

    #[error("invalid depth {0}: must be positive")]
    InvalidDepth(f64),

    #[error("index ({row}, {col}) out of range for {height}x{width}")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is singular")]
    Singular,

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("completer failed at level {level}: {source}")]
    Completer {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier for the error variant, used by the CLI's
    /// single-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BehindCamera { .. } => "behind_camera",
            Error::InvalidDepth(_) => "invalid_depth",
            Error::IndexOutOfRange { .. } => "index",
            Error::Domain(_) => "domain",
            Error::Dimension(_) => "dimension",
            Error::Singular => "singular",
            Error::Geometry(_) => "geometry",
            Error::Config(_) => "config",
            Error::Completer { .. } => "completer",
            Error::Dataset(_) => "dataset",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
