use std::path::PathBuf;

use thiserror::Error;

use crate::kg::WordDiagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: missing required column `{column}`")]
    Schema { path: PathBuf, column: String },

    #[error("invalid configuration field `{field}`: {message}")]
    ConfigField { field: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("token `{0}` is not in the embedding vocabulary")]
    OutOfVocabulary(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("unknown topic `{topic}`; available topics: {}", .available.join(", "))]
    UnknownTopic {
        topic: String,
        available: Vec<String>,
    },

    #[error("topic `{topic}` is not in the related-terms registry")]
    UnregisteredTopic { topic: String },

    #[error("could not map topic `{topic}` to any knowledge-graph entity")]
    UnresolvableTopic {
        topic: String,
        diagnostics: Vec<WordDiagnostic>,
    },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("run with seed {seed} failed: {source}")]
    Restart {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("example {index}: {source}")]
    Example {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("input too long: topic segment has {topic} tokens, sentence segment has {sentence} tokens, limit is {limit} positions including [CLS]/[SEP]")]
    SequenceTooLong {
        topic: usize,
        sentence: usize,
        limit: usize,
    },

    #[error("parameter shape mismatch for arrays: {}", .0.join(", "))]
    ShapeMismatch(Vec<String>),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
    /// A configuration error naming the offending field.
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ConfigField {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether the error stems from a bad configuration rather than bad data or I/O.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::ConfigField { .. } | Error::Config(_))
    }
}
