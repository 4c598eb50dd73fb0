use std::path::PathBuf;

use thiserror::Error;

/// Failure modes of checkpoint loading; each is a distinct error class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckpointFault {
    BadMagic,
    VersionMismatch { found: u32, expected: u32 },
    Header(String),
    Manifest(String),
    Truncated { expected: u64, actual: u64 },
}

impl std::fmt::Display for CheckpointFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BadMagic => write!(f, "not a checkpoint file (bad magic line)"),
            Self::VersionMismatch { found, expected } => {
                write!(f, "format version {found} is not supported (expected {expected})")
            }
            Self::Header(msg) => write!(f, "malformed header: {msg}"),
            Self::Manifest(msg) => write!(f, "inconsistent array manifest: {msg}"),
            Self::Truncated { expected, actual } => {
                write!(f, "file holds {actual} bytes but the manifest declares {expected}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite evaluation: {0}")]
    Evaluation(String),

    #[error("series of length {len} is too short (need at least {min})")]
    SeriesTooShort { len: usize, min: usize },

    #[error("envelope undefined: only {found} extrema available")]
    EnvelopeUndefined { found: usize },

    #[error("insufficient extrema to sift ({maxima} maxima, {minima} minima)")]
    InsufficientExtrema { maxima: usize, minima: usize },

    #[error("index {index} out of range: {detail}")]
    Bounds { index: i64, detail: String },

    #[error("{path}: row {row}: {msg}")]
    Ingestion { path: String, row: usize, msg: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Divergence { epoch: usize, batch: usize },

    #[error("checkpoint {path}: {fault}")]
    Checkpoint { path: PathBuf, fault: CheckpointFault },

    #[error("configuration key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable class name used in machine-readable diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Self::Dimension { .. } => "DimensionError",
            Self::Domain(_) => "DomainError",
            Self::Contract(_) => "ContractError",
            Self::Evaluation(_) => "EvaluationError",
            Self::SeriesTooShort { .. } => "SeriesTooShortError",
            Self::EnvelopeUndefined { .. } => "EnvelopeUndefined",
            Self::InsufficientExtrema { .. } => "InsufficientExtrema",
            Self::Bounds { .. } => "BoundsError",
            Self::Ingestion { .. } => "IngestionError",
            Self::Divergence { .. } => "DivergenceError",
            Self::Checkpoint { fault, .. } => match fault {
                CheckpointFault::BadMagic => "CheckpointMagicError",
                CheckpointFault::VersionMismatch { .. } => "CheckpointVersionError",
                CheckpointFault::Header(_) => "CheckpointHeaderError",
                CheckpointFault::Manifest(_) => "CheckpointManifestError",
                CheckpointFault::Truncated { .. } => "CheckpointTruncatedError",
            },
            Self::Config { .. } => "ConfigError",
            Self::Io { .. } => "IoError",
        }
    }

    /// True for failures caused by user input rather than internal faults.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Self::Divergence { .. } | Self::Evaluation(_))
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Self::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
