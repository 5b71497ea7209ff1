//! Wire messages: client ⇄ cloud memory exchange and the client-engine socket.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::MemoryEntry;

/// Asks the cloud for fresh memory built from `query_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRequest {
    pub session_id: String,
    pub request_seq: u64,
    pub query_text: String,
    /// Retrieval fan-out; the service default applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub retrieval_ms: f64,
    pub generation_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.retrieval_ms + self.generation_ms
    }
}

/// A decoded memory response, ready for the coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryResponse {
    pub session_id: String,
    pub request_seq: u64,
    pub entry: MemoryEntry,
    pub timings: StageTimings,
}

/// JSON body of `POST /v1/memory` responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryResponseBody {
    pub session_id: String,
    pub request_seq: u64,
    pub bullets: Vec<String>,
    pub timings: StageTimings,
}

impl MemoryResponseBody {
    pub fn from_response(resp: &MemoryResponse) -> Self {
        Self {
            session_id: resp.session_id.clone(),
            request_seq: resp.request_seq,
            bullets: resp.entry.bullets().to_vec(),
            timings: resp.timings,
        }
    }

    /// Stamps the entry with the receiver's clock.
    pub fn into_response(self, created_at_ms: u64) -> Result<MemoryResponse> {
        let entry = MemoryEntry::new(self.bullets, self.request_seq, created_at_ms)?;
        Ok(MemoryResponse {
            session_id: self.session_id,
            request_seq: self.request_seq,
            entry,
            timings: self.timings,
        })
    }
}

/// Machine-readable failure body returned with 4xx/5xx statuses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// Messages the UI (or harness) sends to the client engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InboundMessage {
    Type { payload: String },
    Accept {},
    Reject {
        #[serde(default)]
        payload: String,
    },
}

/// Messages the client engine pushes to the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OutboundMessage {
    Suggestion {
        text: String,
        memory_seq_used: Option<u64>,
        latency_ms: f64,
    },
    MemoryUpdate {
        bullets: Vec<String>,
        request_seq: u64,
        staleness_tokens: usize,
    },
    /// A rejected inbound message; the session continues.
    Error { code: String, message: String },
}
