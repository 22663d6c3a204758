use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("unknown config key `{key}`{}", suggestion.as_ref().map(|s| format!(", did you mean `{s}`?")).unwrap_or_default())]
    UnknownKey {
        key: String,
        suggestion: Option<String>,
    },

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("unsupported {what} version {found} (this build reads {supported})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("empty document")]
    EmptyDocument,

    #[error("target vocabulary {target} cannot hold {required} reserved ids and alphabet pieces")]
    VocabTooSmall { target: usize, required: usize },

    #[error("duplicate special token {0:?}")]
    DuplicateSpecial(String),

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("head dimension {0} must be even for rotary embeddings")]
    OddHeadDim(usize),

    #[error("sequence of {len} tokens exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGrad(String),

    #[error("loss mask selects no positions")]
    EmptyLoss,

    #[error("vocabulary lacks chat special token {0:?}")]
    MissingChatSpecial(String),

    #[error("chat example has an empty assistant turn")]
    EmptyAssistant,

    #[error("need at least two tokens, got {0}")]
    TooFewTokens(usize),

    #[error("confusion table is empty")]
    EmptyTable,

    #[error("overlapping spans {0:?} and {1:?} in one span set")]
    OverlappingSpans((usize, usize), (usize, usize)),

    #[error("invalid span {start}..{end} for document of length {len}")]
    InvalidSpan {
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("unknown token {token:?}; nearest: {}", nearest.join(", "))]
    UnknownToken { token: String, nearest: Vec<String> },

    #[error("selection is empty")]
    EmptySelection,

    #[error("training set is invalid: {0}")]
    TrainingSet(String),

    #[error("resume mismatch: {0}")]
    ResumeMismatch(String),

    #[error("replay mismatch for {path}: expected {expected}, got {found}")]
    ReplayMismatch {
        path: String,
        expected: String,
        found: String,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownKey { .. } | Error::SchemaVersion { .. } => 2,
            Error::NonFiniteGrad(_) => 4,
            _ => 3,
        }
    }
}
