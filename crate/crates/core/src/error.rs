use std::path::PathBuf;

/// Errors produced by model construction, training, data loading and export.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or dimensions that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// Input values the operation cannot accept (non-finite, empty, out of range).
    #[error("invalid input: {0}")]
    Input(String),

    /// Configuration values outside their valid range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed file contents.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// Labels and instances that cannot be paired.
    #[error("pairing error: {0}")]
    Pairing(String),

    /// A gradient or parameter became non-finite during training.
    #[error("training diverged at epoch {epoch}, instance {instance}: {detail}")]
    Diverged {
        epoch: usize,
        instance: usize,
        detail: String,
    },

    /// Checkpoint written by an incompatible format version.
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    /// Checkpoint whose contents contradict each other.
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    /// Export that does not apply to the given model.
    #[error("unsupported export: {0}")]
    UnsupportedExport(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

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
}
