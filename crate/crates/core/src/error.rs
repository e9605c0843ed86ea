use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("design space too large to enumerate: {0} designs")]
    Enumeration(u128),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("rank correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("unknown format `{0}`")]
    UnknownFormat(String),
    #[error("trial with seed {seed} failed: {source}")]
    Trial {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format version mismatch: file has {found}, expected {expected}")]
    Version { found: String, expected: String },
    #[error("malformed content: {0}")]
    Malformed(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: usize, got: usize) -> Self {
        Error::Shape { expected, got }
    }
}
