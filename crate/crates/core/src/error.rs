use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Failure categories reported by the NPY reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpyErrorKind {
    BadMagic,
    UnsupportedVersion,
    HeaderSyntax,
    UnsupportedDtype,
    FortranOrder,
    BadShape,
    Truncated,
    TrailingBytes,
}

impl fmt::Display for NpyErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NpyErrorKind::BadMagic => "bad magic string",
            NpyErrorKind::UnsupportedVersion => "unsupported format version",
            NpyErrorKind::HeaderSyntax => "malformed header dictionary",
            NpyErrorKind::UnsupportedDtype => "unsupported dtype",
            NpyErrorKind::FortranOrder => "fortran_order arrays are not supported",
            NpyErrorKind::BadShape => "array must be two-dimensional",
            NpyErrorKind::Truncated => "payload shorter than shape requires",
            NpyErrorKind::TrailingBytes => "payload longer than shape requires",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("npy format error at byte {offset}: {kind}{}", detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default())]
    Npy {
        offset: u64,
        kind: NpyErrorKind,
        detail: Option<String>,
    },

    #[error("eigensolver residual {residual:e} exceeds tolerance {tolerance:e}")]
    EigenResidual { residual: f64, tolerance: f64 },

    #[error("pagerank did not converge after {0} iterations")]
    PageRankNonConvergence(usize),

    #[error("non-finite gradient at step {0}")]
    NonFiniteGradient(usize),

    #[error("empty cluster: {0}")]
    EmptyCluster(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("report schema: {0}")]
    Schema(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable, machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Invalid(_) => "invalid",
            Error::Degenerate(_) => "degenerate",
            Error::Npy { .. } => "npy",
            Error::EigenResidual { .. } => "eigensolver",
            Error::PageRankNonConvergence(_) => "pagerank",
            Error::NonFiniteGradient(_) => "gradient",
            Error::EmptyCluster(_) => "empty-cluster",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Schema(_) => "schema",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
