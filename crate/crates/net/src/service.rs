//! The cloud memory service: `POST /v1/memory` and `GET /v1/health`.
//!
//! The service is stateless per session. Each request runs retrieval and
//! takeaway generation on a blocking thread, bounded by a semaphore that caps
//! concurrent backend use and by an overall timeout.

use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hybridrag_core::backend::LlmBackend;
use hybridrag_core::memgen::generate_memory;
use hybridrag_core::protocol::{ErrorBody, MemoryRequest, MemoryResponseBody};
use hybridrag_core::retriever::{CorpusIndex, Document, Retriever};
use hybridrag_core::text::split_tokens;
use hybridrag_core::types::EngineConfig;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tracing::{info, warn};

use crate::config::{build_embedder, ServiceConfig};
use crate::Result;

/// Response header carrying the wall time spent inside the handler.
pub const HANDLER_MS_HEADER: &str = "x-handler-ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    /// `initializing` until an index is installed, then `ready`.
    pub status: String,
    pub index_chunks: usize,
    pub embedder_id: String,
    pub backend_id: String,
    pub uptime_s: f64,
}

/// A failed request, rendered as a status code plus [`ErrorBody`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ServiceError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody { code: code.into(), message: message.into() },
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

struct Shared {
    started: Instant,
    engine: EngineConfig,
    timeout: Duration,
    embedder_id: String,
    backend: Arc<dyn LlmBackend>,
    retriever: RwLock<Option<Arc<Retriever>>>,
    permits: Arc<Semaphore>,
    auth_token: Option<String>,
}

#[derive(Clone)]
pub struct CloudService {
    shared: Arc<Shared>,
}

impl CloudService {
    /// A service with no index yet; health reports `initializing`.
    pub fn new(cfg: &ServiceConfig, backend: Arc<dyn LlmBackend>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            shared: Arc::new(Shared {
                started: Instant::now(),
                engine: cfg.engine_config(),
                timeout: cfg.timeout(),
                embedder_id: cfg.embedder_id.clone(),
                backend,
                retriever: RwLock::new(None),
                permits: Arc::new(Semaphore::new(cfg.max_concurrent_calls)),
                auth_token: cfg.auth_token.clone(),
            }),
        })
    }

    /// Chunks and embeds `docs`, then starts serving requests.
    pub fn ingest(&self, docs: &[Document]) -> Result<()> {
        let embedder = build_embedder(&self.shared.embedder_id)?;
        let retriever = Retriever::from_documents(docs, embedder, self.shared.engine.chunk_tokens)?;
        self.install(retriever);
        Ok(())
    }

    /// Installs a prebuilt index; its embedder must match the configuration.
    pub fn set_index(&self, index: CorpusIndex) -> Result<()> {
        let embedder = build_embedder(&self.shared.embedder_id)?;
        self.install(Retriever::new(index, embedder)?);
        Ok(())
    }

    fn install(&self, retriever: Retriever) {
        info!(chunks = retriever.index().len(), "index ready");
        *self.shared.retriever.write().expect("index lock poisoned") = Some(Arc::new(retriever));
    }

    pub fn health(&self) -> Health {
        let index = self.shared.retriever.read().expect("index lock poisoned").clone();
        Health {
            status: if index.is_some() { "ready" } else { "initializing" }.into(),
            index_chunks: index.map_or(0, |r| r.index().len()),
            embedder_id: self.shared.embedder_id.clone(),
            backend_id: self.shared.backend.id().to_owned(),
            uptime_s: self.shared.started.elapsed().as_secs_f64(),
        }
    }

    /// Runs retrieval and generation for one request.
    pub async fn handle(&self, req: MemoryRequest) -> Result<MemoryResponseBody, ServiceError> {
        if split_tokens(&req.query_text).is_empty() {
            return Err(ServiceError::new(StatusCode::BAD_REQUEST, "empty_query", "query_text has no tokens"));
        }
        if req.k == Some(0) {
            return Err(ServiceError::new(StatusCode::BAD_REQUEST, "bad_request", "k must be >= 1"));
        }
        let retriever = self.shared.retriever.read().expect("index lock poisoned").clone();
        let Some(retriever) = retriever else {
            return Err(ServiceError::new(StatusCode::SERVICE_UNAVAILABLE, "initializing", "index is not ready"));
        };
        let mut cfg = self.shared.engine.clone();
        if let Some(k) = req.k {
            cfg.k = k;
        }
        let backend = Arc::clone(&self.shared.backend);
        let permits = Arc::clone(&self.shared.permits);
        let query = req.query_text.clone();
        let work = async move {
            let permit = permits.acquire_owned().await.expect("semaphore closed");
            tokio::task::spawn_blocking(move || {
                let _permit = permit;
                generate_memory(&query, &retriever, backend.as_ref(), &cfg)
            })
            .await
        };
        let generated = match tokio::time::timeout(self.shared.timeout, work).await {
            Err(_) => {
                warn!(session = %req.session_id, seq = req.request_seq, "memory generation timed out");
                return Err(ServiceError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "timeout",
                    format!("generation exceeded {} ms", self.shared.timeout.as_millis()),
                ));
            }
            Ok(Err(join)) => {
                return Err(ServiceError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", join.to_string()));
            }
            Ok(Ok(Err(e))) => {
                warn!(session = %req.session_id, seq = req.request_seq, error = %e, "memory generation failed");
                let code = match e {
                    hybridrag_core::Error::EmptyIndex => "empty_index",
                    _ => "generation_failed",
                };
                return Err(ServiceError::new(StatusCode::INTERNAL_SERVER_ERROR, code, e.to_string()));
            }
            Ok(Ok(Ok(m))) => m,
        };
        Ok(MemoryResponseBody {
            session_id: req.session_id,
            request_seq: req.request_seq,
            bullets: generated.bullets,
            timings: generated.timings,
        })
    }

    fn authorized(&self, headers: &HeaderMap) -> bool {
        let Some(token) = &self.shared.auth_token else {
            return true;
        };
        headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token)
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/v1/memory", post(memory_handler))
            .route("/v1/health", get(health_handler))
            .with_state(self.clone())
    }

    pub async fn serve(self, listener: TcpListener) -> std::io::Result<()> {
        axum::serve(listener, self.router()).await
    }
}

async fn health_handler(State(svc): State<CloudService>) -> Json<Health> {
    Json(svc.health())
}

async fn memory_handler(State(svc): State<CloudService>, headers: HeaderMap, body: Bytes) -> Response {
    let started = Instant::now();
    if !svc.authorized(&headers) {
        return ServiceError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
            .into_response();
    }
    let req: MemoryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return ServiceError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()).into_response(),
    };
    let mut resp = match svc.handle(req).await {
        Ok(body) => Json(body).into_response(),
        Err(e) => e.into_response(),
    };
    let ms = started.elapsed().as_secs_f64() * 1e3;
    if let Ok(v) = HeaderValue::from_str(&format!("{ms:.3}")) {
        resp.headers_mut().insert(HANDLER_MS_HEADER, v);
    }
    resp
}
