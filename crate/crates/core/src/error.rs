use std::path::PathBuf;

use thiserror::Error;

/// Failure to parse one of the workbench's text or binary formats.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{format}: line {line}: {message}")]
pub struct ParseError {
    pub format: &'static str,
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(format: &'static str, line: usize, message: impl Into<String>) -> Self {
        Self {
            format,
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("design vector is empty")]
    EmptyDesign,

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("image {width}x{height} is smaller than the {support}-pixel kernel support")]
    ImageTooSmall {
        width: usize,
        height: usize,
        support: usize,
    },

    #[error("need at least {needed} descriptors, got {got}")]
    TooFewDescriptors { needed: usize, got: usize },

    #[error("training set contains a single class")]
    SingleClass,

    #[error("ROC curve undefined: y_true contains a single class")]
    RocUndefined,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("no feasible region found after {0} swarm initializations")]
    NoFeasibleRegion(usize),

    #[error("unknown config key `{key}` in section [{section}]")]
    UnknownConfigKey { section: String, key: String },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// Failure tied to one dataset record.
    #[error("record {id}: {source}")]
    Record { id: String, source: Box<Error> },
}

impl Error {
    pub fn record(id: impl Into<String>, source: Error) -> Self {
        Error::Record {
            id: id.into(),
            source: Box::new(source),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
