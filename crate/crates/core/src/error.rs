use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed plan (line {line}): {reason}")]
    MalformedPlan { line: usize, reason: String },

    #[error("line {line}: cannot parse {column} value {value:?} as a number")]
    NumberParse {
        line: usize,
        column: String,
        value: String,
    },

    #[error("schema violation in execution {execution_id:?}, field {field}: {reason}")]
    SchemaViolation {
        execution_id: String,
        field: String,
        reason: String,
    },

    #[error("need at least 3 labeled executions to split, got {0}")]
    TooFewExecutions(usize),

    #[error("k = {k} exceeds reference set size {size}")]
    KExceedsReference { k: usize, size: usize },

    #[error("feature dimension mismatch: model expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training set is empty")]
    EmptyTraining,

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("cannot compute statistics over an empty sample")]
    Empty,

    #[error("no prediction for node {0:?}")]
    MissingPrediction(String),

    #[error("unsupported {what} version {found} (expected {expected})")]
    VersionMismatch {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
