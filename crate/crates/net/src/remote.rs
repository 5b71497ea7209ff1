//! Blocking HTTP clients: a remote LLM backend and the cloud memory client.
//! Async callers should run these on a blocking thread.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use hybridrag_core::backend::{BackendError, CompletionRequest, LlmBackend};
use hybridrag_core::protocol::{ErrorBody, MemoryRequest, MemoryResponseBody};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use ureq::Agent;

/// Request body of the completion API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionBody {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f32,
    pub top_p: f32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionReply {
    pub text: String,
}

fn agent(timeout: Duration) -> Agent {
    Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn is_timeout(e: &ureq::Error) -> bool {
    match e {
        ureq::Error::Timeout(_) => true,
        ureq::Error::Io(io) => matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock),
        _ => false,
    }
}

/// LLM reached over `POST {prompt, max_tokens, temperature, top_p} → {text}`.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    id: String,
    endpoint: String,
    token: Option<String>,
    agent: Agent,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let endpoint = endpoint.into();
        Self {
            id: format!("remote:{endpoint}"),
            endpoint,
            token,
            agent: agent(timeout),
        }
    }
}

impl LlmBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let body = CompletionBody {
            prompt: req.prompt.clone(),
            max_tokens: req.max_tokens,
            temperature: req.temperature,
            top_p: req.top_p,
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            call = call.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| {
            if is_timeout(&e) {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Rejected(format!("HTTP {}: {text}", status.as_u16())));
        }
        let reply: CompletionReply = resp.body_mut().read_json().map_err(|e| {
            if is_timeout(&e) {
                BackendError::Timeout
            } else {
                BackendError::Transport(format!("bad completion body: {e}"))
            }
        })?;
        Ok(reply.text)
    }
}

/// Serves `backend` at `POST /v1/complete` using the completion API.
pub fn completion_router(backend: Arc<dyn LlmBackend>) -> Router {
    async fn complete(
        State(backend): State<Arc<dyn LlmBackend>>,
        Json(body): Json<CompletionBody>,
    ) -> Result<Json<CompletionReply>, (StatusCode, String)> {
        let req = CompletionRequest {
            prompt: body.prompt,
            max_tokens: body.max_tokens,
            temperature: body.temperature,
            top_p: body.top_p,
        };
        let out = tokio::task::spawn_blocking(move || backend.complete(&req))
            .await
            .map_err(|e| (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        out.map(|text| Json(CompletionReply { text }))
            .map_err(|e| (StatusCode::BAD_GATEWAY, e.to_string()))
    }
    Router::new().route("/v1/complete", post(complete)).with_state(backend)
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timed out")]
    Timeout,
    #[error("HTTP {status}: {}", body.as_ref().map_or("", |b| b.code.as_str()))]
    Status { status: u16, body: Option<ErrorBody> },
    #[error("undecodable response: {0}")]
    Decode(String),
}

/// Client for the cloud service's `POST /v1/memory`.
#[derive(Debug, Clone)]
pub struct CloudClient {
    base_url: String,
    token: Option<String>,
    agent: Agent,
}

impl CloudClient {
    pub fn new(base_url: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            token,
            agent: agent(timeout),
        }
    }

    pub fn fetch_memory(&self, req: &MemoryRequest) -> Result<MemoryResponseBody, ClientError> {
        let mut call = self.agent.post(format!("{}/v1/memory", self.base_url));
        if let Some(t) = &self.token {
            call = call.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = call.send_json(req).map_err(|e| {
            if is_timeout(&e) {
                ClientError::Timeout
            } else {
                ClientError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.body_mut().read_json::<ErrorBody>().ok();
            return Err(ClientError::Status { status: status.as_u16(), body });
        }
        resp.body_mut()
            .read_json()
            .map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// `GET /v1/health` as raw JSON.
    pub fn health(&self) -> Result<serde_json::Value, ClientError> {
        let mut resp = self
            .agent
            .get(format!("{}/v1/health", self.base_url))
            .call()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        resp.body_mut()
            .read_json()
            .map_err(|e| ClientError::Decode(e.to_string()))
    }
}
