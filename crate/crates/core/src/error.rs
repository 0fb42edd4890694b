use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DmaeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DmaeError {
    #[error("dimension mismatch in `{operand}`: expected {expected}, got {actual}")]
    Dimension {
        operand: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("bad magic bytes in {0}")]
    BadMagic(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error("inconsistent container: {0}")]
    Inconsistent(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}: loss {loss:.6e} exceeds 10x initial {initial:.6e}")]
    Divergence { epoch: usize, loss: f64, initial: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DmaeError {
    pub(crate) fn dim(operand: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        DmaeError::Dimension {
            operand,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DmaeError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable identifier printed by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            DmaeError::Dimension { .. } => "E_DIMENSION",
            DmaeError::Config(_) => "E_CONFIG",
            DmaeError::Data(_) => "E_DATA",
            DmaeError::Parse { .. } => "E_PARSE",
            DmaeError::BadMagic(_) => "E_FORMAT_MAGIC",
            DmaeError::VersionMismatch { .. } => "E_FORMAT_VERSION",
            DmaeError::Truncated(_) => "E_FORMAT_TRUNCATED",
            DmaeError::Inconsistent(_) => "E_FORMAT_INCONSISTENT",
            DmaeError::Contract(_) => "E_CONTRACT",
            DmaeError::Divergence { .. } => "E_DIVERGENCE",
            DmaeError::Io { .. } => "E_IO",
        }
    }

    /// Process exit status: 3 data, 4 config, 5 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            DmaeError::Data(_)
            | DmaeError::Parse { .. }
            | DmaeError::BadMagic(_)
            | DmaeError::VersionMismatch { .. }
            | DmaeError::Truncated(_)
            | DmaeError::Inconsistent(_)
            | DmaeError::Io { .. } => 3,
            DmaeError::Config(_) | DmaeError::Dimension { .. } | DmaeError::Contract(_) => 4,
            DmaeError::Divergence { .. } => 5,
        }
    }
}
