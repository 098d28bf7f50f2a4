use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input outside the valid domain: {0}")]
    OutOfDomain(String),
    #[error("rational polynomial denominator vanished ({0:e})")]
    DegenerateDenominator(f64),
    #[error("localization did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("localization jacobian is singular (det = {0:e})")]
    DegenerateJacobian(f64),
    #[error("scale/offset fit is degenerate: {0}")]
    DegenerateFit(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("no sign change in the field; surface is empty")]
    EmptySurface,
    #[error("grid specifications do not match: {0}")]
    GridMismatch(String),
    #[error("no jointly valid cells between the two rasters")]
    NoOverlap,
    #[error("point set is empty")]
    EmptySet,
    #[error("dataset has no usable images")]
    EmptyDataset,
    #[error("rpc fit residual {residual:.4} px exceeds {limit} px")]
    RpcFitFailed { residual: f64, limit: f64 },
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::InvalidArgument(_) | Error::MissingFile(_) | Error::Parse { .. }
        )
    }
}
