//! Augmentation coordinator.
//!
//! Watches the writing context, decides when the cloud should be asked for
//! fresh memory, builds the incremental query, and owns the bounded FIFO
//! memory. A request is issued when the token edit distance between the
//! current text and the diff base is strictly greater than `tau` and no other
//! request is outstanding. A threshold crossing that happens while a request
//! is in flight is picked up by [`Coordinator::poll`] once the response lands.
//!
//! All mutation goes through `&mut self`; the owner serializes user events and
//! network responses onto one task.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::protocol::{MemoryRequest, MemoryResponse};
use crate::text::{detokenize, levenshtein, split_tokens};
use crate::types::{Context, DiffBase, EngineConfig, Memory};

/// Incremental queries shorter than this are padded with preceding context.
pub const MIN_QUERY_TOKENS: usize = 8;
/// Upper bound on query length in tokens.
pub const MAX_QUERY_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied,
    /// `request_seq` was not newer than the last applied response.
    Stale,
}

#[derive(Debug, Clone)]
pub struct Coordinator {
    session_id: String,
    tau: usize,
    k: usize,
    diff_base: DiffBase,
    context: Context,
    previous_text: String,
    memory: Memory,
    last_issued_seq: u64,
    last_applied_seq: u64,
    in_flight: Option<u64>,
    // Crossing observed while a request was outstanding (step diffing only).
    pending_trigger: bool,
    // Context text at issue time, for requests whose response has not landed.
    issued_context: BTreeMap<u64, String>,
    applied_context: Option<String>,
}

impl Coordinator {
    pub fn new(session_id: impl Into<String>, cfg: &EngineConfig) -> Self {
        Self {
            session_id: session_id.into(),
            tau: cfg.tau,
            k: cfg.k,
            diff_base: cfg.diff_base,
            context: Context::default(),
            previous_text: String::new(),
            memory: Memory::new(cfg.memory_capacity),
            last_issued_seq: 0,
            last_applied_seq: 0,
            in_flight: None,
            pending_trigger: false,
            issued_context: BTreeMap::new(),
            applied_context: None,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    /// Current memory; never waits on outstanding requests.
    pub fn memory(&self) -> &Memory {
        &self.memory
    }

    pub fn last_issued_seq(&self) -> u64 {
        self.last_issued_seq
    }

    pub fn last_applied_seq(&self) -> u64 {
        self.last_applied_seq
    }

    pub fn in_flight(&self) -> Option<u64> {
        self.in_flight
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Records `new_text` as the current context and returns a request when
    /// the edit distance to the diff base exceeds `tau` and nothing is in flight.
    pub fn observe(&mut self, new_text: impl Into<String>) -> Option<MemoryRequest> {
        let new_text = new_text.into();
        self.context.step_counter += 1;
        let previous = std::mem::replace(&mut self.context.text, new_text);
        let base = match self.diff_base {
            DiffBase::Snapshot => &self.context.snapshot_at_last_request,
            DiffBase::PreviousStep => &previous,
        };
        let crossed = exceeds(distance(&self.context.text, base), self.tau);
        self.previous_text = previous;
        if !crossed {
            return None;
        }
        if self.in_flight.is_some() {
            self.pending_trigger = true;
            return None;
        }
        self.issue()
    }

    /// Re-checks the trigger without a new edit. Call after a response has
    /// been applied (or a request abandoned) to flush deferred crossings.
    pub fn poll(&mut self) -> Option<MemoryRequest> {
        if self.in_flight.is_some() {
            return None;
        }
        let due = match self.diff_base {
            DiffBase::Snapshot => exceeds(
                distance(&self.context.text, &self.context.snapshot_at_last_request),
                self.tau,
            ),
            DiffBase::PreviousStep => self.pending_trigger,
        };
        if due {
            self.issue()
        } else {
            None
        }
    }

    fn issue(&mut self) -> Option<MemoryRequest> {
        let query_text = query_for(&self.context)?;
        self.last_issued_seq += 1;
        self.in_flight = Some(self.last_issued_seq);
        self.pending_trigger = false;
        self.context.snapshot_at_last_request = self.context.text.clone();
        self.issued_context
            .insert(self.last_issued_seq, self.context.text.clone());
        Some(MemoryRequest {
            session_id: self.session_id.clone(),
            request_seq: self.last_issued_seq,
            query_text,
            k: Some(self.k),
        })
    }

    /// Merges a response into memory. Stale responses are dropped; the oldest
    /// entry is evicted once capacity is reached.
    pub fn apply_response(&mut self, resp: MemoryResponse) -> Result<ApplyOutcome> {
        if resp.session_id != self.session_id {
            return Err(Error::Protocol(format!(
                "response for unknown session {:?}",
                resp.session_id
            )));
        }
        if resp.request_seq == 0 || resp.request_seq > self.last_issued_seq {
            return Err(Error::Protocol(format!(
                "response seq {} was never issued (last issued {})",
                resp.request_seq, self.last_issued_seq
            )));
        }
        if resp.request_seq <= self.last_applied_seq {
            return Ok(ApplyOutcome::Stale);
        }
        let seq = resp.request_seq;
        let mut entry = resp.entry;
        entry.source_request_seq = seq;
        self.memory.push(entry);
        self.last_applied_seq = seq;
        if let Some(text) = self.issued_context.remove(&seq) {
            self.applied_context = Some(text);
        }
        self.issued_context.retain(|&s, _| s > seq);
        if self.in_flight == Some(seq) {
            self.in_flight = None;
        }
        Ok(ApplyOutcome::Applied)
    }

    /// Gives up on an outstanding request (transport or service failure). The
    /// snapshot is kept, so the next request needs another `tau` of edits.
    pub fn abandon(&mut self, request_seq: u64) {
        if self.in_flight == Some(request_seq) {
            self.in_flight = None;
        }
        self.issued_context.remove(&request_seq);
    }

    /// Token edit distance between the context the newest memory entry was
    /// generated from and the current context. `None` while memory is empty.
    pub fn staleness_tokens(&self) -> Option<usize> {
        if self.memory.is_empty() {
            return None;
        }
        self.applied_context
            .as_deref()
            .map(|src| distance(src, &self.context.text))
    }
}

fn exceeds(distance: usize, tau: usize) -> bool {
    distance > tau
}

fn distance(a: &str, b: &str) -> usize {
    levenshtein(&split_tokens(a), &split_tokens(b))
}

// Like `incremental_query`, but falls back to the trailing window when the
// texts are token-identical (possible under step diffing).
fn query_for(ctx: &Context) -> Option<String> {
    match incremental_query(ctx) {
        Ok(q) => Some(q),
        Err(_) => {
            let tokens = split_tokens(&ctx.text);
            (!tokens.is_empty()).then(|| tail(&tokens, MAX_QUERY_TOKENS))
        }
    }
}

fn tail(tokens: &[String], n: usize) -> String {
    detokenize(&tokens[tokens.len().saturating_sub(n)..])
}

/// The part of `current.text` that is new since the last request snapshot.
///
/// Takes the tokens after the longest common token prefix. Suffixes shorter
/// than [`MIN_QUERY_TOKENS`] are replaced with the last
/// `min(MAX_QUERY_TOKENS, |text|)` tokens of the text; longer suffixes are
/// capped to their last [`MAX_QUERY_TOKENS`] tokens.
pub fn incremental_query(current: &Context) -> Result<String> {
    let cur = split_tokens(&current.text);
    let snap = split_tokens(&current.snapshot_at_last_request);
    if cur == snap {
        return Err(Error::NoNewContent);
    }
    let common = cur.iter().zip(&snap).take_while(|(a, b)| a == b).count();
    let suffix = &cur[common..];
    let query = if suffix.len() >= MIN_QUERY_TOKENS {
        tail(suffix, MAX_QUERY_TOKENS)
    } else {
        tail(&cur, MAX_QUERY_TOKENS)
    };
    if query.is_empty() {
        return Err(Error::NoNewContent);
    }
    Ok(query)
}
