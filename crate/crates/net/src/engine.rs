//! Client-engine WebSocket at `GET /v1/session`.
//!
//! Each connection owns one [`Session`]. Inbound `type` / `accept` / `reject`
//! messages drive the session and produce a `suggestion`; memory requests go
//! to the cloud on blocking threads and their results come back over a
//! channel as `memory_update` messages. Suggestions never wait for them.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use hybridrag_core::backend::LlmBackend;
use hybridrag_core::coordinator::ApplyOutcome;
use hybridrag_core::engine::{Session, UserEvent};
use hybridrag_core::memgen::generate_memory;
use hybridrag_core::protocol::{InboundMessage, MemoryRequest, MemoryResponseBody, OutboundMessage};
use hybridrag_core::retriever::Retriever;
use hybridrag_core::types::EngineConfig;
use hybridrag_core::Error as CoreError;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tracing::{debug, warn};

use crate::remote::CloudClient;
use crate::Result;

/// Where memory requests go. Implementations block.
pub trait MemoryTransport: Send + Sync {
    fn fetch(&self, req: &MemoryRequest) -> std::result::Result<MemoryResponseBody, String>;
}

impl MemoryTransport for CloudClient {
    fn fetch(&self, req: &MemoryRequest) -> std::result::Result<MemoryResponseBody, String> {
        self.fetch_memory(req).map_err(|e| e.to_string())
    }
}

/// In-process cloud: retrieval and generation without HTTP.
pub struct LocalCloud {
    retriever: Retriever,
    backend: Arc<dyn LlmBackend>,
    cfg: EngineConfig,
}

impl LocalCloud {
    pub fn new(retriever: Retriever, backend: Arc<dyn LlmBackend>, cfg: EngineConfig) -> Self {
        Self { retriever, backend, cfg }
    }
}

impl MemoryTransport for LocalCloud {
    fn fetch(&self, req: &MemoryRequest) -> std::result::Result<MemoryResponseBody, String> {
        let mut cfg = self.cfg.clone();
        if let Some(k) = req.k {
            cfg.k = k;
        }
        let m = generate_memory(&req.query_text, &self.retriever, self.backend.as_ref(), &cfg)
            .map_err(|e| e.to_string())?;
        Ok(MemoryResponseBody {
            session_id: req.session_id.clone(),
            request_seq: req.request_seq,
            bullets: m.bullets,
            timings: m.timings,
        })
    }
}

#[derive(Clone)]
pub struct EngineState {
    cfg: EngineConfig,
    client: Arc<dyn LlmBackend>,
    cloud: Arc<dyn MemoryTransport>,
    sessions: Arc<AtomicU64>,
}

impl EngineState {
    pub fn new(cfg: EngineConfig, client: Arc<dyn LlmBackend>, cloud: Arc<dyn MemoryTransport>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            client,
            cloud,
            sessions: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn router(&self) -> Router {
        Router::new().route("/v1/session", get(upgrade)).with_state(self.clone())
    }

    pub async fn serve(self, listener: TcpListener) -> std::io::Result<()> {
        axum::serve(listener, self.router()).await
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<EngineState>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

type MemoryResult = (u64, std::result::Result<MemoryResponseBody, String>);

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn error(code: &str, message: impl Into<String>) -> OutboundMessage {
    OutboundMessage::Error { code: code.into(), message: message.into() }
}

struct Connection {
    state: EngineState,
    session: Session,
    memory_tx: mpsc::UnboundedSender<MemoryResult>,
}

impl Connection {
    fn dispatch(&self, req: MemoryRequest) {
        debug!(seq = req.request_seq, "memory request");
        let cloud = Arc::clone(&self.state.cloud);
        let tx = self.memory_tx.clone();
        tokio::task::spawn_blocking(move || {
            let result = cloud.fetch(&req);
            // The session may have closed; nothing to deliver to then.
            let _ = tx.send((req.request_seq, result));
        });
    }

    async fn on_inbound(&mut self, text: &str) -> Vec<OutboundMessage> {
        let msg: InboundMessage = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return vec![error("bad_message", e.to_string())],
        };
        let event = match msg {
            InboundMessage::Type { payload } => UserEvent::Type(payload),
            InboundMessage::Accept {} => UserEvent::Accept,
            InboundMessage::Reject { payload } => UserEvent::Reject(payload),
        };
        match self.session.step(event) {
            Ok(Some(req)) => self.dispatch(req),
            Ok(None) => {}
            Err(CoreError::NoPendingSuggestion) => {
                return vec![error("no_pending_suggestion", "accept/reject needs a pending suggestion")]
            }
            Err(e) => return vec![error("invalid_event", e.to_string())],
        }
        self.suggest().await.into_iter().collect()
    }

    async fn suggest(&mut self) -> Option<OutboundMessage> {
        if self.session.context_text().is_empty() {
            return None;
        }
        let snapshot = self.session.clone();
        let client = Arc::clone(&self.state.client);
        let result = tokio::task::spawn_blocking(move || snapshot.suggest(client.as_ref())).await;
        match result {
            Ok(Ok(s)) => {
                let msg = OutboundMessage::Suggestion {
                    text: s.text.clone(),
                    memory_seq_used: s.memory_seq_used,
                    latency_ms: s.latency.as_secs_f64() * 1e3,
                };
                self.session.set_pending(Some(s));
                Some(msg)
            }
            Ok(Err(e)) => {
                warn!(error = %e, "suggestion failed");
                Some(error("suggestion_failed", e.to_string()))
            }
            Err(e) => Some(error("suggestion_failed", e.to_string())),
        }
    }

    fn on_memory(&mut self, seq: u64, result: std::result::Result<MemoryResponseBody, String>) -> Option<OutboundMessage> {
        let body = match result {
            Ok(b) => b,
            Err(e) => {
                warn!(seq, error = %e, "memory request failed");
                if let Some(next) = self.session.abandon(seq) {
                    self.dispatch(next);
                }
                return None;
            }
        };
        if body.request_seq != seq {
            if let Some(next) = self.session.abandon(seq) {
                self.dispatch(next);
            }
            return Some(error("protocol", format!("response for seq {} carried seq {}", seq, body.request_seq)));
        }
        let resp = match body.into_response(now_ms()) {
            Ok(r) => r,
            Err(e) => {
                if let Some(next) = self.session.abandon(seq) {
                    self.dispatch(next);
                }
                return Some(error("empty_memory", e.to_string()));
            }
        };
        let bullets = resp.entry.bullets().to_vec();
        match self.session.apply_response(resp) {
            Ok((outcome, next)) => {
                if let Some(next) = next {
                    self.dispatch(next);
                }
                (outcome == ApplyOutcome::Applied).then(|| OutboundMessage::MemoryUpdate {
                    bullets,
                    request_seq: seq,
                    staleness_tokens: self.session.staleness_tokens().unwrap_or(0),
                })
            }
            Err(e) => {
                if let Some(next) = self.session.abandon(seq) {
                    self.dispatch(next);
                }
                Some(error("protocol", e.to_string()))
            }
        }
    }
}

async fn run_session(socket: WebSocket, state: EngineState) {
    let n = state.sessions.fetch_add(1, Ordering::SeqCst) + 1;
    let session = match Session::new(format!("session-{n}"), state.cfg.clone()) {
        Ok(s) => s,
        Err(e) => {
            warn!(error = %e, "cannot start session");
            return;
        }
    };
    let (memory_tx, mut memory_rx) = mpsc::unbounded_channel();
    let mut conn = Connection { state, session, memory_tx };
    let (mut sink, mut stream) = socket.split();
    loop {
        let out = tokio::select! {
            msg = stream.next() => match msg {
                Some(Ok(Message::Text(t))) => conn.on_inbound(t.as_str()).await,
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => continue,
            },
            Some((seq, result)) = memory_rx.recv() => conn.on_memory(seq, result).into_iter().collect(),
        };
        for m in out {
            let text = serde_json::to_string(&m).expect("outbound messages serialize");
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
    }
}
