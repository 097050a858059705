use thiserror::Error;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("similarity undefined: {0}")]
    UndefinedSimilarity(String),
    #[error("bank is frozen; mutation rejected")]
    Frozen,
    #[error("state error: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("numeric error at {context}: {msg}")]
    Numeric { context: String, msg: String },
    #[error("graph error: {0}")]
    Graph(String),
    #[error("evaluation error for trajectory {index}: {msg}")]
    Evaluation { index: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::State(_) | Error::Frozen => 2,
            Error::Parse { .. }
            | Error::Data(_)
            | Error::Shape(_)
            | Error::UndefinedSimilarity(_)
            | Error::Format(_)
            | Error::Evaluation { .. }
            | Error::Io(_) => 3,
            Error::Numeric { .. } | Error::Graph(_) => 4,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
