//! Domain types shared across the client and cloud halves.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::truncate_words;

/// Upper bound on the length of a single takeaway bullet, in words.
pub const MAX_BULLET_WORDS: usize = 64;

/// Threshold value that can never be exceeded: disables memory requests.
pub const TAU_NEVER: usize = usize::MAX;

/// The user's evolving document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub text: String,
    /// Text captured when the last memory request was issued.
    pub snapshot_at_last_request: String,
    /// Edit-step index; never decreases.
    pub step_counter: u64,
}

/// One cloud-generated bundle of takeaways.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    bullets: Vec<String>,
    pub source_request_seq: u64,
    /// Milliseconds since the owning session's epoch (wall or virtual).
    pub created_at_ms: u64,
}

impl MemoryEntry {
    /// Builds an entry, trimming bullets, dropping blank ones and truncating
    /// each to [`MAX_BULLET_WORDS`] words.
    pub fn new<I, S>(bullets: I, source_request_seq: u64, created_at_ms: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let bullets: Vec<String> = bullets
            .into_iter()
            .map(|b| truncate_words(b.as_ref(), MAX_BULLET_WORDS))
            .filter(|b| !b.is_empty())
            .collect();
        if bullets.is_empty() {
            return Err(Error::MemoryGenerationFailed("memory entry has no bullets".into()));
        }
        Ok(Self {
            bullets,
            source_request_seq,
            created_at_ms,
        })
    }

    pub fn bullets(&self) -> &[String] {
        &self.bullets
    }

    pub fn into_bullets(self) -> Vec<String> {
        self.bullets
    }
}

/// Bounded FIFO of memory entries, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Memory {
    entries: VecDeque<MemoryEntry>,
    capacity: usize,
}

impl Memory {
    /// # Panics
    /// Panics if `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "memory capacity must be at least 1");
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl DoubleEndedIterator<Item = &MemoryEntry> + ExactSizeIterator {
        self.entries.iter()
    }

    /// Appends `entry`, evicting and returning the oldest entry when full.
    pub fn push(&mut self, entry: MemoryEntry) -> Option<MemoryEntry> {
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(entry);
        evicted
    }

    /// All bullets, oldest entry first.
    pub fn bullets(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().flat_map(|e| e.bullets.iter().map(String::as_str))
    }

    /// Highest request sequence number represented in memory.
    pub fn latest_seq(&self) -> Option<u64> {
        self.entries.back().map(|e| e.source_request_seq)
    }
}

/// What the coordinator diffs the current text against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffBase {
    /// Text captured at the last issued request; small edits accumulate.
    #[default]
    Snapshot,
    /// Text at the previous observation.
    PreviousStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Edit-distance threshold in tokens; a request needs distance > tau.
    pub tau: usize,
    pub memory_capacity: usize,
    /// Retrieval fan-out.
    pub k: usize,
    pub chunk_tokens: usize,
    pub max_suggest_tokens: usize,
    /// Generation cap for each takeaway call.
    pub max_memory_tokens: usize,
    pub diff_base: DiffBase,
    /// Sentence-packed passage size for takeaway generation.
    pub max_passage_tokens: usize,
    pub passages_per_call: usize,
    /// Prompt budget (tokens) of one takeaway call.
    pub prompt_token_budget: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tau: 10,
            memory_capacity: 4,
            k: 3,
            chunk_tokens: 128,
            max_suggest_tokens: 15,
            max_memory_tokens: 256,
            diff_base: DiffBase::Snapshot,
            max_passage_tokens: 128,
            passages_per_call: 4,
            prompt_token_budget: 3000,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.k == 0 {
            return fail("k must be >= 1");
        }
        if self.chunk_tokens == 0 {
            return fail("chunk_tokens must be >= 1");
        }
        if self.memory_capacity == 0 {
            return fail("memory_capacity must be >= 1");
        }
        if self.max_suggest_tokens == 0 {
            return fail("max_suggest_tokens must be >= 1");
        }
        if self.max_passage_tokens < 16 {
            return fail("max_passage_tokens must be >= 16");
        }
        if self.passages_per_call == 0 {
            return fail("passages_per_call must be >= 1");
        }
        Ok(())
    }

    pub fn with_tau(mut self, tau: usize) -> Self {
        self.tau = tau;
        self
    }
}
