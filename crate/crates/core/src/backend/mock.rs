//! Deterministic mock backends for tests, simulation, and offline demos.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionRequest, LlmBackend};
use crate::engine::split_completion_prompt;
use crate::memgen::{format_takeaways, parse_passages};
use crate::text::{detokenize, split_sentences, split_tokens, truncate_tokens};

/// Always answers with the same text, clipped to `max_tokens`.
#[derive(Debug, Clone)]
pub struct FixedBackend {
    id: String,
    text: String,
}

impl FixedBackend {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

impl LlmBackend for FixedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        Ok(truncate_tokens(&self.text, req.max_tokens))
    }
}

/// Assigns probability `1/V` to every token of a `V`-word vocabulary.
#[derive(Debug, Clone)]
pub struct UniformBackend {
    id: String,
    vocab_size: usize,
    text: String,
}

impl UniformBackend {
    pub fn new(vocab_size: usize, text: impl Into<String>) -> Self {
        assert!(vocab_size >= 1);
        Self {
            id: format!("uniform-{vocab_size}"),
            vocab_size,
            text: text.into(),
        }
    }
}

impl LlmBackend for UniformBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        Ok(truncate_tokens(&self.text, req.max_tokens))
    }

    fn logprobs(&self, _prompt: &str, continuation: &[String]) -> Result<Vec<f64>, BackendError> {
        let lp = -(self.vocab_size as f64).ln();
        Ok(vec![lp; continuation.len()])
    }
}

/// Continues the prompt by copying from its `Reference:` block.
///
/// The longest suffix of the context (up to `max_suffix` tokens) that occurs
/// in the reference with at least one token after it is located, preferring
/// the last occurrence; the tokens that follow it are emitted. Without any
/// overlap the reference is copied from its start. Prompts without a
/// reference block produce an empty completion.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    id: String,
    vocab_size: usize,
    confidence: f64,
    max_suffix: usize,
}

impl EchoBackend {
    pub fn new() -> Self {
        Self {
            id: "echo-memory-v1".into(),
            vocab_size: 50_000,
            confidence: 0.9,
            max_suffix: 32,
        }
    }

    /// Probability mass placed on the echoed token by `logprobs`.
    pub fn with_confidence(mut self, confidence: f64) -> Self {
        assert!(confidence > 0.0 && confidence < 1.0);
        self.confidence = confidence;
        self
    }

    fn continuation(&self, reference: &[String], context: &[String], max_tokens: usize) -> Vec<String> {
        echo_continuation(reference, context, max_tokens, self.max_suffix)
    }
}

impl Default for EchoBackend {
    fn default() -> Self {
        Self::new()
    }
}

/// Core of the echo rule, exposed for the cloud mock.
pub fn echo_continuation(
    reference: &[String],
    context: &[String],
    max_tokens: usize,
    max_suffix: usize,
) -> Vec<String> {
    if reference.is_empty() || max_tokens == 0 {
        return Vec::new();
    }
    let longest = context.len().min(max_suffix).min(reference.len() - 1);
    for m in (1..=longest).rev() {
        let suffix = &context[context.len() - m..];
        let found = (0..reference.len() - m)
            .rev()
            .find(|&p| &reference[p..p + m] == suffix);
        if let Some(p) = found {
            let start = p + m;
            let end = (start + max_tokens).min(reference.len());
            return reference[start..end].to_vec();
        }
    }
    reference[..max_tokens.min(reference.len())].to_vec()
}

impl LlmBackend for EchoBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let (reference, context) = split_completion_prompt(&req.prompt);
        let Some(reference) = reference else {
            return Ok(String::new());
        };
        let out = self.continuation(&split_tokens(reference), &split_tokens(context), req.max_tokens);
        Ok(detokenize(&out))
    }

    fn logprobs(&self, prompt: &str, continuation: &[String]) -> Result<Vec<f64>, BackendError> {
        let (reference, context) = split_completion_prompt(prompt);
        let v = self.vocab_size as f64;
        let miss = ((1.0 - self.confidence) / v).ln();
        let hit = (self.confidence + (1.0 - self.confidence) / v).ln();
        let Some(reference) = reference else {
            return Ok(vec![-v.ln(); continuation.len()]);
        };
        let reference = split_tokens(reference);
        let mut ctx = split_tokens(context);
        let mut out = Vec::with_capacity(continuation.len());
        for tok in continuation {
            let predicted = self.continuation(&reference, &ctx, 1);
            out.push(if predicted.first() == Some(tok) { hit } else { miss });
            ctx.push(tok.clone());
        }
        Ok(out)
    }
}

/// Stand-in for the cloud LLM.
///
/// Takeaway prompts are answered extractively: each passage contributes its
/// leading sentences as bullets, within an even share of `max_tokens`. Any
/// other prompt is continued with the echo rule.
#[derive(Debug, Clone)]
pub struct MockCloudBackend {
    id: String,
    echo: EchoBackend,
    max_bullets_per_passage: usize,
}

impl MockCloudBackend {
    pub fn new() -> Self {
        Self {
            id: "mock-cloud-v1".into(),
            echo: EchoBackend::new(),
            max_bullets_per_passage: 3,
        }
    }
}

impl Default for MockCloudBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl LlmBackend for MockCloudBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let Some(passages) = parse_passages(&req.prompt) else {
            return self.echo.complete(req);
        };
        let share = (req.max_tokens / passages.len().max(1)).max(1);
        let blocks: Vec<Vec<String>> = passages
            .iter()
            .map(|p| {
                let mut used = 0;
                let mut bullets = Vec::new();
                for sentence in split_sentences(p).into_iter().take(self.max_bullets_per_passage) {
                    let n = split_tokens(sentence).len();
                    if bullets.is_empty() && n > share {
                        bullets.push(truncate_tokens(sentence, share));
                        break;
                    }
                    if used + n > share {
                        break;
                    }
                    used += n;
                    bullets.push(sentence.to_owned());
                }
                bullets
            })
            .collect();
        Ok(format_takeaways(&blocks))
    }

    fn logprobs(&self, prompt: &str, continuation: &[String]) -> Result<Vec<f64>, BackendError> {
        self.echo.logprobs(prompt, continuation)
    }
}

/// One rule of a [`TableBackend`] fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRule {
    pub contains: String,
    #[serde(default)]
    pub response: Option<String>,
    /// When set, the call fails with this message.
    #[serde(default)]
    pub error: Option<String>,
}

/// Table-driven mock loaded from a JSON fixture:
/// `{"id": ..., "rules": [{"contains": ..., "response": ...}], "default": ..., "delay_ms": ...}`.
/// The first rule whose `contains` is a substring of the prompt wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableBackend {
    #[serde(default = "TableBackend::default_id")]
    pub id: String,
    #[serde(default)]
    pub rules: Vec<TableRule>,
    #[serde(default)]
    pub default: Option<String>,
    /// Artificial latency added to every call.
    #[serde(default)]
    pub delay_ms: u64,
}

impl TableBackend {
    fn default_id() -> String {
        "table-mock".into()
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl LlmBackend for TableBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        if self.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.delay_ms));
        }
        let rule = self.rules.iter().find(|r| req.prompt.contains(&r.contains));
        match rule {
            Some(TableRule { error: Some(e), .. }) => Err(BackendError::Rejected(e.clone())),
            Some(TableRule { response: Some(r), .. }) => Ok(r.clone()),
            _ => self
                .default
                .clone()
                .ok_or_else(|| BackendError::Rejected("no fixture rule matched the prompt".into())),
        }
    }
}

/// Adds a fixed wall-clock delay in front of another backend.
#[derive(Debug, Clone)]
pub struct DelayedBackend<B> {
    inner: B,
    delay: Duration,
}

impl<B> DelayedBackend<B> {
    pub fn new(inner: B, delay: Duration) -> Self {
        Self { inner, delay }
    }
}

impl<B: LlmBackend> LlmBackend for DelayedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        std::thread::sleep(self.delay);
        self.inner.complete(req)
    }

    fn logprobs(&self, prompt: &str, continuation: &[String]) -> Result<Vec<f64>, BackendError> {
        self.inner.logprobs(prompt, continuation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::build_prompt_from_bullets;
    use crate::memgen::{build_takeaway_prompt, parse_takeaways};

    fn toks(s: &str) -> Vec<String> {
        split_tokens(s)
    }

    #[test]
    fn echo_copies_after_matching_suffix() {
        let reference = toks("The pier was built in 1869 and reopened in 1989.");
        let out = echo_continuation(&reference, &toks("Clevedon pier was built"), 3, 32);
        assert_eq!(out, toks("in 1869 and"));
    }

    #[test]
    fn echo_without_overlap_starts_at_reference() {
        let prompt = build_prompt_from_bullets("Air Mata Iboe", ["was released in 1941"]);
        let out = EchoBackend::new().complete(&CompletionRequest::greedy(prompt, 15)).unwrap();
        assert_eq!(out, "was released in 1941");
    }

    #[test]
    fn echo_vanilla_prompt_is_empty() {
        let out = EchoBackend::new().complete(&CompletionRequest::greedy("Hello", 15)).unwrap();
        assert_eq!(out, "");
    }

    #[test]
    fn echo_logprobs_reward_the_echoed_token() {
        let prompt = build_prompt_from_bullets("the pier", ["the pier was built"]);
        let lps = EchoBackend::new().logprobs(&prompt, &toks("was moved")).unwrap();
        assert!(lps[0] > lps[1]);
        assert!(lps.iter().all(|lp| *lp < 0.0));
    }

    #[test]
    fn uniform_logprobs() {
        let lps = UniformBackend::new(100, "x").logprobs("p", &toks("a b c")).unwrap();
        assert_eq!(lps, vec![-(100f64).ln(); 3]);
    }

    #[test]
    fn cloud_mock_answers_takeaway_prompts() {
        let prompt = build_takeaway_prompt(&[
            "The pier opened in 1869. It is long.".to_string(),
            "The hotel dates from 1823.".to_string(),
        ])
        .unwrap()
        .render();
        let out = MockCloudBackend::new()
            .complete(&CompletionRequest::greedy(prompt, 256))
            .unwrap();
        let parsed = parse_takeaways(&out, 2).unwrap();
        assert_eq!(
            parsed,
            vec![
                vec!["The pier opened in 1869.".to_string(), "It is long.".to_string()],
                vec!["The hotel dates from 1823.".to_string()],
            ]
        );
    }

    #[test]
    fn table_backend_rules() {
        let t = TableBackend::from_json(
            r#"{"rules":[{"contains":"boom","error":"down"},{"contains":"P1:","response":"- a"}],"default":"- z"}"#,
        )
        .unwrap();
        assert_eq!(t.complete(&CompletionRequest::greedy("x P1: y", 5)).unwrap(), "- a");
        assert_eq!(t.complete(&CompletionRequest::greedy("nothing", 5)).unwrap(), "- z");
        assert!(matches!(
            t.complete(&CompletionRequest::greedy("boom P1:", 5)),
            Err(BackendError::Rejected(_))
        ));
        assert_eq!(t.id, "table-mock");
    }
}
