use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type. Variants map onto process exit codes: config
/// errors exit 2, data/runtime errors exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Containers disagree on shape, length, or declared layout.
    #[error("shape error: {0}")]
    Structural(String),

    /// An operation was called before a required prior step.
    #[error("state error: {0}")]
    State(String),

    /// Embeddings come from different extractors and cannot be compared.
    #[error("comparability error: {0}")]
    Comparability(String),

    /// Statistically meaningless input (e.g. a constant sample).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Config text failed to parse or contained an invalid value.
    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },

    /// A binary payload violated its declared format.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// Filesystem failure, annotated with the path involved.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A CSV file is missing columns or holds unparseable cells.
    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI reports for this error: 2 for config problems,
    /// 3 for data or runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            _ => 3,
        }
    }

    /// Wraps an I/O error with the path it concerned.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
