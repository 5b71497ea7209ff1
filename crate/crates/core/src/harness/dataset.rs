//! Instruction-tuning triplets `(prompt, memory, reference)`.
//!
//! The first section of each document is cut into sentence chunks, each chunk
//! is truncated at a random ratio to form the prompt, memory is generated by
//! retrieving from the document's remaining sections, and the cloud model
//! writes the reference continuation.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::backend::{CompletionRequest, LlmBackend};
use crate::engine::build_prompt_from_bullets;
use crate::error::{Error, Result};
use crate::memgen::generate_memory;
use crate::retriever::{Document, Embedder, Retriever};
use crate::text::{detokenize, split_sentences, split_tokens, truncate_tokens};
use crate::types::EngineConfig;

pub const MIN_CHUNK_TOKENS: usize = 16;
pub const MAX_CHUNK_TOKENS: usize = 128;
pub const MIN_SPLIT_RATIO: f64 = 0.125;
pub const MAX_SPLIT_RATIO: f64 = 0.5;
/// Output cap for reference generation.
pub const REFERENCE_MAX_TOKENS: usize = 44;

/// Serialized form: one JSON object per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTriplet {
    pub prompt: String,
    pub memory: Vec<String>,
    pub reference: String,
}

/// A triplet with the bookkeeping used to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub triplet: TrainingTriplet,
    pub doc_id: String,
    pub chunk_index: usize,
    pub chunk_tokens: usize,
    pub split_ratio: f64,
    pub prompt_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedDoc {
    pub doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreparedData {
    pub records: Vec<TripletRecord>,
    pub skipped: Vec<SkippedDoc>,
}

impl PreparedData {
    pub fn triplets(&self) -> impl Iterator<Item = &TrainingTriplet> {
        self.records.iter().map(|r| &r.triplet)
    }
}

/// Splits a document into sections at blank lines. Empty sections are dropped.
pub fn split_sections(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n"));
    }
    out
}

/// Greedily packs whole sentences into chunks of at most `max_tokens`.
/// Sentences longer than `max_tokens` are hard-split; chunks shorter than
/// `min_tokens` are discarded.
pub fn sentence_chunks(text: &str, min_tokens: usize, max_tokens: usize) -> Vec<String> {
    assert!(max_tokens > 0 && min_tokens <= max_tokens);
    let mut out = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let flush = |current: &mut Vec<String>, out: &mut Vec<String>| {
        if current.len() >= min_tokens {
            out.push(detokenize(current));
        }
        current.clear();
    };
    for sentence in split_sentences(text) {
        let tokens = split_tokens(sentence);
        if current.len() + tokens.len() > max_tokens {
            flush(&mut current, &mut out);
        }
        if tokens.len() > max_tokens {
            let mut pieces = tokens.chunks(max_tokens).peekable();
            while let Some(piece) = pieces.next() {
                if pieces.peek().is_some() {
                    current.extend_from_slice(piece);
                    flush(&mut current, &mut out);
                } else {
                    current.extend_from_slice(piece);
                }
            }
        } else {
            current.extend(tokens);
        }
    }
    flush(&mut current, &mut out);
    out
}

/// Builds triplets for every usable document. Deterministic given `seed`:
/// the split ratios are drawn from one stream in document and chunk order.
pub fn prepare_training_triplets(
    docs: &[Document],
    make_embedder: &dyn Fn() -> Box<dyn Embedder>,
    cloud: &dyn LlmBackend,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<PreparedData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = PreparedData::default();
    for doc in docs {
        let mut skip = |reason: &str| {
            warn!(doc_id = %doc.doc_id, reason, "skipping document");
            data.skipped.push(SkippedDoc { doc_id: doc.doc_id.clone(), reason: reason.into() });
        };
        let sections = split_sections(&doc.text);
        if sections.len() < 2 {
            skip("document has a single section");
            continue;
        }
        let rest: Vec<Document> = sections[1..]
            .iter()
            .enumerate()
            .map(|(i, s)| Document::new(format!("{}#{}", doc.doc_id, i + 1), s.clone()))
            .collect();
        let retriever = match Retriever::from_documents(&rest, make_embedder(), cfg.chunk_tokens) {
            Ok(r) if !r.index().is_empty() => r,
            Ok(_) | Err(Error::EmptyIndex) => {
                skip("remaining sections are empty");
                continue;
            }
            Err(e) => return Err(e),
        };
        for (chunk_index, chunk) in sentence_chunks(&sections[0], MIN_CHUNK_TOKENS, MAX_CHUNK_TOKENS)
            .into_iter()
            .enumerate()
        {
            let tokens = split_tokens(&chunk);
            let split_ratio = rng.random_range(MIN_SPLIT_RATIO..=MAX_SPLIT_RATIO);
            let prompt_tokens = ((split_ratio * tokens.len() as f64).floor() as usize).max(1);
            let prompt = detokenize(&tokens[..prompt_tokens]);
            let memory = match generate_memory(&prompt, &retriever, cloud, cfg) {
                Ok(m) => m.bullets,
                Err(e) => {
                    warn!(doc_id = %doc.doc_id, chunk_index, error = %e, "memory generation failed");
                    continue;
                }
            };
            let req = CompletionRequest::greedy(build_prompt_from_bullets(&prompt, &memory), REFERENCE_MAX_TOKENS);
            let reference = match cloud.complete(&req) {
                Ok(r) => truncate_tokens(&r, REFERENCE_MAX_TOKENS),
                Err(e) => {
                    warn!(doc_id = %doc.doc_id, chunk_index, error = %e, "reference generation failed");
                    continue;
                }
            };
            data.records.push(TripletRecord {
                triplet: TrainingTriplet { prompt, memory, reference },
                doc_id: doc.doc_id.clone(),
                chunk_index,
                chunk_tokens: tokens.len(),
                split_ratio,
                prompt_tokens,
            });
        }
    }
    Ok(data)
}

pub fn write_triplets<'a, W: Write>(mut w: W, triplets: impl IntoIterator<Item = &'a TrainingTriplet>) -> Result<()> {
    for t in triplets {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
