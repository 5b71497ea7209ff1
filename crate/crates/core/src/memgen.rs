//! Memory generation: compress retrieved chunks into key-takeaway bullets.
//!
//! Retrieved chunks are re-split into sentence-preserving passages, sent to
//! the cloud LLM in consolidated takeaway prompts, and the `### Pi:`-delimited
//! bullet lists that come back are flattened (in passage order) into one
//! memory entry.

use std::time::Instant;

use tracing::warn;

use crate::backend::{CompletionRequest, LlmBackend};
use crate::error::{Error, Result};
use crate::protocol::StageTimings;
use crate::retriever::Retriever;
use crate::text::{detokenize, split_sentences, split_tokens, truncate_words};
use crate::types::{EngineConfig, MemoryEntry, MAX_BULLET_WORDS};

pub const TAKEAWAY_INSTRUCTION: &str = "Your task is to carefully read each paragraph and generate a list of key takeaways from the paragraphs in concise sentences. Key takeaways for each paragraph should be no longer than 64 words and should include important details such as facts, entities, persons, organizations, numbers, years, and locations. Please keep each key takeaway short. When referring to previously mentioned entities, use the entity name instead of the pronoun 'it'. Please ensure that your output adheres to these guidelines to the best of your ability.";

pub const TAKEAWAY_TRAILER: &str = "Key Takeaways: ### P1:";

/// Re-splits each chunk on sentence boundaries and packs whole sentences
/// into passages of at most `max_passage_tokens` tokens. A sentence longer
/// than the cap is hard-split into cap-sized pieces.
pub fn split_for_generation<S: AsRef<str>>(chunks: &[S], max_passage_tokens: usize) -> Vec<String> {
    assert!(max_passage_tokens >= 1);
    let mut passages = Vec::new();
    for chunk in chunks {
        let mut current: Vec<String> = Vec::new();
        for sentence in split_sentences(chunk.as_ref()) {
            let tokens = split_tokens(sentence);
            if tokens.len() > max_passage_tokens {
                warn!(
                    tokens = tokens.len(),
                    cap = max_passage_tokens,
                    "sentence exceeds passage cap; hard-splitting"
                );
                if !current.is_empty() {
                    passages.push(detokenize(&std::mem::take(&mut current)));
                }
                passages.extend(tokens.chunks(max_passage_tokens).map(detokenize));
                continue;
            }
            if current.len() + tokens.len() > max_passage_tokens {
                passages.push(detokenize(&std::mem::take(&mut current)));
            }
            current.extend(tokens);
        }
        if !current.is_empty() {
            passages.push(detokenize(&current));
        }
    }
    passages
}

/// The key-takeaway instruction with labeled passages `P1..Pl`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TakeawayPrompt {
    passages: Vec<String>,
}

impl TakeawayPrompt {
    pub fn passages(&self) -> &[String] {
        &self.passages
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(TAKEAWAY_INSTRUCTION.len() + 64);
        out.push_str(TAKEAWAY_INSTRUCTION);
        out.push('\n');
        for (i, p) in self.passages.iter().enumerate() {
            out.push_str(&format!("P{}: {}\n", i + 1, p));
        }
        out.push_str(TAKEAWAY_TRAILER);
        out
    }
}

pub fn build_takeaway_prompt<S: AsRef<str>>(passages: &[S]) -> Result<TakeawayPrompt> {
    if passages.is_empty() {
        return Err(Error::InvalidInput("takeaway prompt needs at least one passage".into()));
    }
    let passages = passages
        .iter()
        .map(|p| p.as_ref().split_whitespace().collect::<Vec<_>>().join(" "))
        .collect();
    Ok(TakeawayPrompt { passages })
}

/// Recovers the passages of a rendered takeaway prompt; `None` when `prompt`
/// is not one.
pub fn parse_passages(prompt: &str) -> Option<Vec<String>> {
    let body = prompt.strip_prefix(TAKEAWAY_INSTRUCTION)?;
    let body = body.strip_suffix(TAKEAWAY_TRAILER)?;
    let mut passages = Vec::new();
    for line in body.lines().filter(|l| !l.trim().is_empty()) {
        let label = format!("P{}: ", passages.len() + 1);
        passages.push(line.strip_prefix(&label)?.to_owned());
    }
    (!passages.is_empty()).then_some(passages)
}

/// Formats per-passage bullets the way a well-behaved LLM answers a takeaway
/// prompt: the first block continues the trailer's `### P1:`.
pub fn format_takeaways(blocks: &[Vec<String>]) -> String {
    let mut out = String::new();
    for (i, bullets) in blocks.iter().enumerate() {
        if i > 0 {
            out.push_str(&format!("### P{}:\n", i + 1));
        }
        for b in bullets {
            out.push_str("- ");
            out.push_str(b);
            out.push('\n');
        }
    }
    out
}

// Finds `### P<n>:` markers as (start, end, n).
fn markers(s: &str) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(off) = s[from..].find("###") {
        let start = from + off;
        let rest = &s[start + 3..];
        let trimmed = rest.trim_start_matches([' ', '\t']);
        let mut end = None;
        if let Some(after_p) = trimmed.strip_prefix('P') {
            let digits: String = after_p.chars().take_while(char::is_ascii_digit).collect();
            if !digits.is_empty() && after_p[digits.len()..].starts_with(':') {
                let consumed = rest.len() - trimmed.len() + 1 + digits.len() + 1;
                if let Ok(n) = digits.parse() {
                    end = Some((start + 3 + consumed, n));
                }
            }
        }
        match end {
            Some((e, n)) => {
                out.push((start, e, n));
                from = e;
            }
            None => from = start + 3,
        }
    }
    out
}

fn bullets_in(block: &str) -> impl Iterator<Item = String> + '_ {
    block.lines().filter_map(|line| {
        let b = line.trim().strip_prefix("- ")?;
        let b = truncate_words(b, MAX_BULLET_WORDS);
        (!b.is_empty()).then_some(b)
    })
}

/// Splits an LLM answer into `expected_passages` bullet lists.
///
/// Text before the first `### Pi:` marker belongs to P1, since the prompt's
/// trailer already opened that block. Markers outside `1..=expected_passages`
/// are ignored along with their content. Missing blocks come back empty.
pub fn parse_takeaways(llm_output: &str, expected_passages: usize) -> Result<Vec<Vec<String>>> {
    let blocks = parse_blocks(llm_output, expected_passages);
    if blocks.iter().all(Vec::is_empty) {
        return Err(Error::MemoryGenerationFailed("no bullets in LLM output".into()));
    }
    Ok(blocks)
}

fn parse_blocks(output: &str, expected: usize) -> Vec<Vec<String>> {
    let mut blocks = vec![Vec::new(); expected];
    let found = markers(output);
    let first_start = found.first().map_or(output.len(), |m| m.0);
    if let Some(b) = blocks.first_mut() {
        b.extend(bullets_in(&output[..first_start]));
    }
    for (i, &(_, end, n)) in found.iter().enumerate() {
        let stop = found.get(i + 1).map_or(output.len(), |m| m.0);
        if (1..=expected).contains(&n) {
            blocks[n - 1].extend(bullets_in(&output[end..stop]));
        } else {
            warn!(label = n, expected, "ignoring out-of-range takeaway block");
        }
    }
    blocks
}

/// Memory produced for one request, before it is stamped into an entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMemory {
    pub bullets: Vec<String>,
    pub timings: StageTimings,
    pub passages: usize,
    pub backend_calls: usize,
}

impl GeneratedMemory {
    pub fn into_entry(self, request_seq: u64, created_at_ms: u64) -> Result<MemoryEntry> {
        MemoryEntry::new(self.bullets, request_seq, created_at_ms)
    }
}

// Greedy batching: at most `per_call` passages and, beyond the first passage,
// no more than `budget` prompt tokens per call.
fn batch_passages(passages: &[String], per_call: usize, budget: usize) -> Vec<Vec<String>> {
    let overhead = split_tokens(TAKEAWAY_INSTRUCTION).len() + split_tokens(TAKEAWAY_TRAILER).len();
    let mut batches: Vec<Vec<String>> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut tokens = overhead;
    for p in passages {
        // Label "P<i>:" tokenizes to two tokens.
        let cost = split_tokens(p).len() + 2;
        if !current.is_empty() && (current.len() == per_call || tokens + cost > budget) {
            batches.push(std::mem::take(&mut current));
            tokens = overhead;
        }
        tokens += cost;
        current.push(p.clone());
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Retrieve → split → prompt → parse, producing the flattened takeaways.
pub fn generate_memory(
    query: &str,
    retriever: &Retriever,
    backend: &dyn LlmBackend,
    cfg: &EngineConfig,
) -> Result<GeneratedMemory> {
    let started = Instant::now();
    let hits = retriever.retrieve(query, cfg.k)?;
    let texts: Vec<&str> = hits.iter().map(|h| h.chunk.text.as_str()).collect();
    let retrieval_ms = started.elapsed().as_secs_f64() * 1e3;

    let gen_started = Instant::now();
    let passages = split_for_generation(&texts, cfg.max_passage_tokens);
    if passages.is_empty() {
        return Err(Error::MemoryGenerationFailed("retrieved chunks contain no text".into()));
    }
    let batches = batch_passages(&passages, cfg.passages_per_call, cfg.prompt_token_budget);
    let mut bullets = Vec::new();
    for batch in &batches {
        let prompt = build_takeaway_prompt(batch)?.render();
        let req = CompletionRequest::greedy(prompt, cfg.max_memory_tokens);
        let out = backend
            .complete(&req)
            .map_err(|e| Error::MemoryGenerationFailed(format!("backend {}: {e}", backend.id())))?;
        bullets.extend(parse_blocks(&out, batch.len()).into_iter().flatten());
    }
    if bullets.is_empty() {
        return Err(Error::MemoryGenerationFailed("no bullets in LLM output".into()));
    }
    Ok(GeneratedMemory {
        bullets,
        timings: StageTimings {
            retrieval_ms,
            generation_ms: gen_started.elapsed().as_secs_f64() * 1e3,
        },
        passages: passages.len(),
        backend_calls: batches.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, FixedBackend, MockCloudBackend};
    use crate::retriever::{CorpusIndex, Document, HashedBowEmbedder};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn sentence(n: usize, tag: &str) -> String {
        let mut s = (0..n - 1).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ");
        s.push('.');
        s
    }

    #[test]
    fn split_packs_whole_sentences() {
        let (s1, s2, s3) = (sentence(20, "a"), sentence(30, "b"), sentence(40, "c"));
        let chunk = format!("{s1} {s2} {s3}");
        let passages = split_for_generation(&[chunk], 64);
        assert_eq!(passages, vec![format!("{s1} {s2}"), s3]);
        assert!(split_for_generation::<&str>(&[], 64).is_empty());
    }

    #[test]
    fn split_hard_splits_oversized_sentence() {
        let passages = split_for_generation(&[sentence(200, "x")], 64);
        let sizes: Vec<usize> = passages.iter().map(|p| split_tokens(p).len()).collect();
        assert_eq!(sizes, vec![64, 64, 64, 8]);
    }

    #[test]
    fn prompt_layout() {
        let p = build_takeaway_prompt(&["first.", "second."]).unwrap().render();
        assert!(p.starts_with(TAKEAWAY_INSTRUCTION));
        assert!(p.contains("no longer than 64 words"));
        assert!(p.contains("use the entity name instead of the pronoun 'it'"));
        assert_eq!(p.matches("P1:").count(), 2, "label plus trailer");
        assert_eq!(p.matches("\nP2: ").count(), 1);
        assert_eq!(p.matches(TAKEAWAY_TRAILER).count(), 1);
        assert!(p.ends_with(TAKEAWAY_TRAILER));

        let one = build_takeaway_prompt(&["only."]).unwrap().render();
        assert!(!one.contains("P2:"));
        assert!(build_takeaway_prompt::<&str>(&[]).is_err());
        assert_eq!(parse_passages(&p).unwrap(), vec!["first.", "second."]);
        assert_eq!(parse_passages("Complete this"), None);
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            parse_takeaways("- a\n- b\n### P2:\n- c", 2).unwrap(),
            vec![vec!["a".to_string(), "b".to_string()], vec!["c".to_string()]]
        );
        assert_eq!(parse_takeaways("- only one", 1).unwrap(), vec![vec!["only one".to_string()]]);
        assert!(matches!(
            parse_takeaways("no bullets here", 1),
            Err(Error::MemoryGenerationFailed(_))
        ));
    }

    #[test]
    fn parse_pads_and_ignores_stray_markers() {
        let out = parse_takeaways("- a\n### P9:\n- lost\n", 3).unwrap();
        assert_eq!(out, vec![vec!["a".to_string()], vec![], vec![]]);
        let out = parse_takeaways("### P1:\n- a\n###P2:\n- b", 2).unwrap();
        assert_eq!(out, vec![vec!["a".to_string()], vec!["b".to_string()]]);
    }

    #[test]
    fn parse_truncates_long_bullets() {
        let long = vec!["w"; 80].join(" ");
        let out = parse_takeaways(&format!("- {long}"), 1).unwrap();
        assert_eq!(out[0][0].split_whitespace().count(), 64);
    }

    fn retriever(docs: &[(&str, &str)]) -> Retriever {
        let e = HashedBowEmbedder::default();
        let docs: Vec<Document> = docs.iter().map(|(id, t)| Document::new(*id, *t)).collect();
        Retriever::new(CorpusIndex::ingest(&docs, &e, 128).unwrap(), Box::new(e)).unwrap()
    }

    struct PerPassage(AtomicUsize);

    impl LlmBackend for PerPassage {
        fn id(&self) -> &str {
            "per-passage"
        }
        fn complete(&self, req: &CompletionRequest) -> std::result::Result<String, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            let passages = parse_passages(&req.prompt).unwrap();
            let blocks: Vec<Vec<String>> = passages
                .iter()
                .map(|p| vec![format!("about {}", p.split_whitespace().next().unwrap())])
                .collect();
            Ok(format_takeaways(&blocks))
        }
    }

    #[test]
    fn generate_memory_one_bullet_per_passage() {
        let r = retriever(&[
            ("a", "apple orchards bloom."),
            ("b", "banana plants grow."),
            ("c", "cherry trees fruit."),
        ]);
        let backend = PerPassage(AtomicUsize::new(0));
        let cfg = EngineConfig::default();
        let m = generate_memory("apple banana cherry", &r, &backend, &cfg).unwrap();
        assert_eq!(m.bullets.len(), 3);
        assert_eq!(m.passages, 3);
        assert_eq!(m.backend_calls, 1);
        let hits = r.retrieve("apple banana cherry", 3).unwrap();
        let expected: Vec<String> = hits
            .iter()
            .map(|h| format!("about {}", h.chunk.text.split_whitespace().next().unwrap()))
            .collect();
        assert_eq!(m.bullets, expected);
    }

    #[test]
    fn generate_memory_truncates_at_retrieval() {
        let r = retriever(&[("a", "The pier opened in 1869.")]);
        let m = generate_memory("pier", &r, &MockCloudBackend::new(), &EngineConfig::default()).unwrap();
        assert_eq!(m.bullets, vec!["The pier opened in 1869.".to_string()]);
    }

    #[test]
    fn generate_memory_caps_bullet_words() {
        let r = retriever(&[("a", "x y z.")]);
        let long = format!("- {}", vec!["word"; 80].join(" "));
        let m = generate_memory("x", &r, &FixedBackend::new("f", long), &EngineConfig {
            max_memory_tokens: 1000,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(m.bullets[0].split_whitespace().count(), 64);
    }

    #[test]
    fn generate_memory_call_count() {
        let docs: Vec<(String, String)> = (0..9)
            .map(|i| (format!("d{i}"), format!("shared topic number{i} sentence.")))
            .collect();
        let refs: Vec<(&str, &str)> = docs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let r = retriever(&refs);
        for (k, per_call) in [(9, 4), (9, 2), (5, 5), (1, 4)] {
            let backend = PerPassage(AtomicUsize::new(0));
            let cfg = EngineConfig {
                k,
                passages_per_call: per_call,
                ..Default::default()
            };
            let m = generate_memory("shared topic", &r, &backend, &cfg).unwrap();
            assert_eq!(m.backend_calls, k.div_ceil(per_call));
            assert_eq!(backend.0.load(Ordering::SeqCst), k.div_ceil(per_call));
        }
    }

    #[test]
    fn backend_failure_maps_to_generation_failure() {
        struct Down;
        impl LlmBackend for Down {
            fn id(&self) -> &str {
                "down"
            }
            fn complete(&self, _: &CompletionRequest) -> std::result::Result<String, BackendError> {
                Err(BackendError::Transport("connection refused".into()))
            }
        }
        let r = retriever(&[("a", "x.")]);
        let err = generate_memory("x", &r, &Down, &EngineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MemoryGenerationFailed(m) if m.contains("connection refused")));
    }
}
