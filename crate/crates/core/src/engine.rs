//! Client engine: memory-conditioned prompt assembly, suggestions, and the
//! accept / reject / type session loop.

use std::time::{Duration, Instant};

use crate::backend::{CompletionRequest, LlmBackend};
use crate::coordinator::{ApplyOutcome, Coordinator};
use crate::error::{Error, Result};
use crate::protocol::{MemoryRequest, MemoryResponse};
use crate::text::{split_tokens, truncate_tokens};
use crate::types::{EngineConfig, Memory};

pub const REFERENCE_PREFIX: &str = "Reference: ";
pub const COMPLETION_INSTRUCTION: &str = "Complete the following text based on the reference:";

/// Instruction-enhanced prompt from raw bullets. With no bullets the context
/// is returned unchanged.
pub fn build_prompt_from_bullets<I, S>(context: &str, bullets: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut reference = String::new();
    for (i, b) in bullets.into_iter().enumerate() {
        if i > 0 {
            reference.push('\n');
        }
        reference.push_str(b.as_ref());
    }
    if reference.is_empty() {
        return context.to_owned();
    }
    format!("{REFERENCE_PREFIX}{reference}\n\n{COMPLETION_INSTRUCTION}\n\n{context}")
}

/// Prompt for the client model: memory bullets (oldest entry first), the
/// completion instruction, then the context. Empty memory yields the bare
/// context.
pub fn build_completion_prompt(context_text: &str, memory: &Memory) -> Result<String> {
    if context_text.is_empty() {
        return Err(Error::InvalidInput("completion prompt needs a non-empty context".into()));
    }
    Ok(build_prompt_from_bullets(context_text, memory.bullets()))
}

/// Splits a completion prompt into its reference block (if any) and context.
pub fn split_completion_prompt(prompt: &str) -> (Option<&str>, &str) {
    let separator = format!("\n\n{COMPLETION_INSTRUCTION}\n\n");
    if let Some(rest) = prompt.strip_prefix(REFERENCE_PREFIX) {
        if let Some((reference, context)) = rest.split_once(&separator) {
            return (Some(reference), context);
        }
    }
    (None, prompt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub text: String,
    pub prompt_used: String,
    /// Highest request sequence represented in the memory used.
    pub memory_seq_used: Option<u64>,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UserEvent {
    Accept,
    Reject(String),
    Type(String),
}

/// Appends model output to user text, adding a separating space when the
/// two would otherwise run together.
pub fn join_continuation(context: &str, addition: &str) -> String {
    let needs_space = !context.is_empty()
        && !context.ends_with(char::is_whitespace)
        && addition.starts_with(|c: char| c.is_alphanumeric() || matches!(c, '(' | '"' | '['));
    if needs_space {
        format!("{context} {addition}")
    } else {
        format!("{context}{addition}")
    }
}

/// One writing session: the coordinator plus accept/reject bookkeeping.
#[derive(Debug, Clone)]
pub struct Session {
    cfg: EngineConfig,
    coordinator: Coordinator,
    accepted_history: String,
    pending: Option<Suggestion>,
}

impl Session {
    pub fn new(session_id: impl Into<String>, cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            coordinator: Coordinator::new(session_id, &cfg),
            cfg,
            accepted_history: String::new(),
            pending: None,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coordinator
    }

    pub fn context_text(&self) -> &str {
        &self.coordinator.context().text
    }

    /// Context text as it stood before the most recent acceptance.
    pub fn accepted_history(&self) -> &str {
        &self.accepted_history
    }

    pub fn pending(&self) -> Option<&Suggestion> {
        self.pending.as_ref()
    }

    pub fn set_pending(&mut self, suggestion: Option<Suggestion>) {
        self.pending = suggestion;
    }

    /// Applies a user event and runs the coordinator. Returns the memory
    /// request to send, if one was triggered.
    pub fn step(&mut self, event: UserEvent) -> Result<Option<MemoryRequest>> {
        let current = self.context_text().to_owned();
        let next = match event {
            UserEvent::Accept => {
                let s = self.pending.take().ok_or(Error::NoPendingSuggestion)?;
                self.accepted_history = current.clone();
                join_continuation(&current, &s.text)
            }
            UserEvent::Reject(input) => {
                self.pending.take().ok_or(Error::NoPendingSuggestion)?;
                current + &input
            }
            UserEvent::Type(delta) => {
                self.pending = None;
                current + &delta
            }
        };
        Ok(self.coordinator.observe(next))
    }

    /// Produces a suggestion from the current context and memory. Never waits
    /// on outstanding memory requests.
    pub fn suggest(&self, backend: &dyn LlmBackend) -> Result<Suggestion> {
        let started = Instant::now();
        let memory = self.coordinator.memory();
        let prompt = build_completion_prompt(self.context_text(), memory)?;
        let req = CompletionRequest::greedy(prompt, self.cfg.max_suggest_tokens);
        let raw = backend.complete(&req).map_err(Error::SuggestionFailed)?;
        let text = truncate_tokens(&raw, self.cfg.max_suggest_tokens);
        debug_assert!(split_tokens(&text).len() <= self.cfg.max_suggest_tokens);
        Ok(Suggestion {
            text,
            prompt_used: req.prompt,
            memory_seq_used: memory.latest_seq(),
            latency: started.elapsed(),
        })
    }

    /// Merges a memory response, then re-checks the trigger for crossings
    /// that were deferred while the request was in flight.
    pub fn apply_response(&mut self, resp: MemoryResponse) -> Result<(ApplyOutcome, Option<MemoryRequest>)> {
        let outcome = self.coordinator.apply_response(resp)?;
        Ok((outcome, self.coordinator.poll()))
    }

    /// Gives up on a failed request and re-checks the trigger.
    pub fn abandon(&mut self, request_seq: u64) -> Option<MemoryRequest> {
        self.coordinator.abandon(request_seq);
        self.coordinator.poll()
    }

    pub fn staleness_tokens(&self) -> Option<usize> {
        self.coordinator.staleness_tokens()
    }
}
