use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the numerical core, the schedulers and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("degenerate 6D rotation: {0}")]
    Degenerate6d(String),

    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),

    #[error("spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("sequence too short: need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("invalid masking ratio {0}: must lie in [0, 1)")]
    InvalidRatio(f64),

    #[error("backward pass reached unsupported op `{0}`")]
    UnsupportedOp(String),

    #[error("training diverged{}: {message}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    TrainingDiverged { epoch: Option<usize>, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {}{}: {message}", path.display(), location.map(|(l, c)| format!(" at line {l}, column {c}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        location: Option<(usize, usize)>,
        message: String,
    },

    #[error("schema error in {}: {message}", path.display())]
    Schema { path: PathBuf, message: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code, used in structured CLI and HTTP error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidRotation(_) => "invalid_rotation",
            Error::Degenerate6d(_) => "degenerate_6d",
            Error::ScheduleMismatch(_) => "schedule_mismatch",
            Error::SpecMismatch(_) => "spec_mismatch",
            Error::Shape(_) => "shape",
            Error::TooShort { .. } => "too_short",
            Error::InvalidRatio(_) => "invalid_ratio",
            Error::UnsupportedOp(_) => "unsupported_op",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::EmptyDataset => "empty_dataset",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Schema { .. } => "schema",
            Error::Checkpoint(e) => e.code(),
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

/// Checkpoint container failures. Each has its own code so callers can tell
/// a stale file from a corrupted one.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("payload checksum mismatch")]
    ChecksumMismatch,
    #[error("character spec hash mismatch: checkpoint {found}, expected {expected}")]
    SpecHashMismatch { found: String, expected: String },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
}

impl CheckpointError {
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "checkpoint_bad_magic",
            CheckpointError::VersionMismatch { .. } => "checkpoint_version",
            CheckpointError::Truncated { .. } => "checkpoint_truncated",
            CheckpointError::ChecksumMismatch => "checkpoint_checksum",
            CheckpointError::SpecHashMismatch { .. } => "checkpoint_spec_hash",
            CheckpointError::Header(_) => "checkpoint_header",
        }
    }
}
