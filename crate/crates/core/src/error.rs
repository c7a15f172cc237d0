//! Error type shared by every module of the crate.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the tensor core, model, data pipeline, and I/O layers.
#[derive(Debug)]
pub enum Error {
    /// An operation received tensors whose shapes do not satisfy its contract.
    Shape { op: &'static str, detail: String },
    /// FFT length is unsupported (odd, or not a power of two for the radix-2 path).
    FftLength { len: usize, requirement: &'static str },
    /// A configuration value is invalid or a config key is unknown.
    Config(String),
    /// A dataset file failed to load or validate.
    Data {
        path: String,
        line: Option<usize>,
        msg: String,
    },
    /// Force/kinematics onset alignment failed.
    Alignment(String),
    /// Marker geometry is degenerate.
    Geometry(String),
    /// A numeric failure (non-finite loss, CRC mismatch, corrupt checkpoint).
    Numeric(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape error in {op}: {detail}"),
            Error::FftLength { len, requirement } => {
                write!(f, "unsupported FFT length {len}: {requirement}")
            }
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data { path, line, msg } => match line {
                Some(l) => write!(f, "data error in {path}:{l}: {msg}"),
                None => write!(f, "data error in {path}: {msg}"),
            },
            Error::Alignment(msg) => write!(f, "alignment error: {msg}"),
            Error::Geometry(msg) => write!(f, "geometry error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl Error {
    /// Process exit code for the CLI: 2 usage/config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data { .. } | Error::Io(_) | Error::Alignment(_) => 3,
            Error::Shape { .. }
            | Error::FftLength { .. }
            | Error::Geometry(_)
            | Error::Numeric(_) => 4,
        }
    }
}
