use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The current context is token-identical to the last request snapshot.
    #[error("no new content to query with")]
    NoNewContent,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("corpus index is empty")]
    EmptyIndex,

    #[error("query is empty")]
    EmptyQuery,

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("embedder mismatch: index built with {index:?}, caller uses {caller:?}")]
    EmbedderMismatch { index: String, caller: String },

    #[error("unsupported index format version {0}")]
    IndexVersion(u32),

    #[error("memory generation failed: {0}")]
    MemoryGenerationFailed(String),

    #[error("suggestion failed: {0}")]
    SuggestionFailed(#[source] BackendError),

    #[error("backend {0:?} does not expose log-probabilities")]
    Capability(String),

    #[error("no pending suggestion to accept or reject")]
    NoPendingSuggestion,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
