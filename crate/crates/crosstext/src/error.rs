//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input tied to a specific line of a file.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// Malformed input without a line anchor (empty file, bad header, ...).
    #[error("format error: {0}")]
    FormatFile(String),

    #[error("duplicate entry '{name}' at line {line}")]
    Duplicate { line: usize, name: String },

    #[error("record '{id}': label '{label}' is not in the category set")]
    Label { id: String, label: String },

    #[error("unknown domain '{0}'")]
    Domain(String),

    #[error("sample '{id}' has no description")]
    MissingDescription { id: String },

    #[error("embedding for '{text}' has zero norm")]
    DegenerateEmbedding { text: String },

    #[error("k={k} out of range for {len} entries")]
    Size { k: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },

    /// Non-2xx response or missing fixture data.
    #[error("provider error{}: {msg}", .status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Provider { status: Option<u16>, msg: String },

    /// Transport-level failure; retried on a fixed exponential schedule.
    #[error("retryable provider error: {0}")]
    RetryableProvider(String),

    #[error("capability not supported: {0}")]
    Capability(String),

    #[error("unknown answer token '{0}'")]
    Vocab(String),

    #[error("non-finite value in {0}")]
    Numerics(String),

    #[error("invalid argument: {0}")]
    Arg(String),

    /// Wraps an error with the pipeline stage or item it came from.
    #[error("{what}: {source}")]
    Context {
        what: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn provider(msg: impl Into<String>) -> Self {
        Error::Provider {
            status: None,
            msg: msg.into(),
        }
    }

    /// Attach a stage or item label to an error as it propagates.
    pub fn context(self, what: impl Into<String>) -> Self {
        Error::Context {
            what: what.into(),
            source: Box::new(self),
        }
    }

    /// Stable kind name for machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format { .. } | Error::FormatFile(_) => "FormatError",
            Error::Duplicate { .. } => "DuplicateError",
            Error::Label { .. } => "LabelError",
            Error::Domain(_) => "DomainError",
            Error::MissingDescription { .. } => "MissingDescriptionError",
            Error::DegenerateEmbedding { .. } => "DegenerateEmbeddingError",
            Error::Size { .. } => "SizeError",
            Error::Dim { .. } => "DimError",
            Error::Provider { .. } => "ProviderError",
            Error::RetryableProvider(_) => "RetryableProviderError",
            Error::Capability(_) => "CapabilityError",
            Error::Vocab(_) => "VocabError",
            Error::Numerics(_) => "NumericsError",
            Error::Arg(_) => "ArgError",
            Error::Context { source, .. } => source.kind(),
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
