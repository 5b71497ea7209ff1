//! Language-model backends.
//!
//! Both the cloud memory generator and the client completion model sit
//! behind [`LlmBackend`]. Deterministic mocks live in [`mock`]; a remote HTTP
//! backend is provided by the networking crate.

use std::sync::Arc;

use thiserror::Error;

pub mod mock;

pub use mock::{EchoBackend, FixedBackend, MockCloudBackend, TableBackend, UniformBackend};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timed out")]
    Timeout,
    #[error("backend rejected the request: {0}")]
    Rejected(String),
    #[error("operation not supported by this backend")]
    Unsupported,
}

/// Decoding parameters for one completion call.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f32,
    pub top_p: f32,
}

impl CompletionRequest {
    /// Deterministic decoding: temperature 0, top_p 1.
    pub fn greedy(prompt: impl Into<String>, max_tokens: usize) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens,
            temperature: 0.0,
            top_p: 1.0,
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Blocking completion call. With temperature 0 the result must be
    /// deterministic for a fixed backend and prompt.
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError>;

    /// Per-token natural-log probabilities of `continuation` given `prompt`.
    fn logprobs(&self, _prompt: &str, _continuation: &[String]) -> Result<Vec<f64>, BackendError> {
        Err(BackendError::Unsupported)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(req)
    }

    fn logprobs(&self, prompt: &str, continuation: &[String]) -> Result<Vec<f64>, BackendError> {
        (**self).logprobs(prompt, continuation)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for Box<T> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(req)
    }

    fn logprobs(&self, prompt: &str, continuation: &[String]) -> Result<Vec<f64>, BackendError> {
        (**self).logprobs(prompt, continuation)
    }
}
