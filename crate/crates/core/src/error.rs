use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("invalid sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },

    #[error("embedding store: {0}")]
    Embedding(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing vector for sample(s): {}", .0.join(", "))]
    MissingVector(Vec<String>),

    #[error("sample {index} has length {length} > capacity {capacity}")]
    Oversize {
        index: usize,
        length: u64,
        capacity: u64,
    },

    #[error("constraint failed: {name}: {detail}")]
    Constraint { name: String, detail: String },

    #[error("dangling request id: {0}")]
    DanglingRequest(String),

    #[error("http: {0}")]
    Http(String),

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("step {step}: {source}")]
    Step {
        step: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for input/contract violations (CLI exit code 2) as opposed to
    /// runtime failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::DuplicateId(_)
            | Error::InvalidSample { .. }
            | Error::Embedding(_)
            | Error::InvalidArgument(_)
            | Error::MissingVector(_)
            | Error::Oversize { .. }
            | Error::Constraint { .. }
            | Error::DanglingRequest(_)
            | Error::Json(_) => true,
            Error::Io { .. } | Error::Http(_) | Error::MalformedResponse(_) | Error::Step { .. } => {
                false
            }
        }
    }
}
