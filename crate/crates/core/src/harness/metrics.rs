//! Utility metrics: sentence-level GLEU and perplexity.

use std::collections::HashMap;

use crate::backend::{BackendError, LlmBackend};
use crate::error::{Error, Result};

/// Highest n-gram order used by default.
pub const GLEU_MAX_N: usize = 4;

fn ngram_counts<T: AsRef<str>>(tokens: &[T], max_n: usize) -> (HashMap<Vec<&str>, usize>, usize) {
    let mut counts = HashMap::new();
    let mut total = 0;
    for n in 1..=max_n.min(tokens.len()) {
        for window in tokens.windows(n) {
            let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
            total += 1;
        }
    }
    (counts, total)
}

/// Sentence-level GLEU: n-grams of orders `1..=max_n` are pooled, matches
/// are clipped by reference counts, and the score is `min(precision, recall)`.
/// An empty hypothesis scores 0.
pub fn gleu<T: AsRef<str>>(hypothesis: &[T], reference: &[T], max_n: usize) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidInput("GLEU reference must be non-empty".into()));
    }
    if max_n == 0 {
        return Err(Error::InvalidInput("GLEU max_n must be >= 1".into()));
    }
    let (hyp, hyp_total) = ngram_counts(hypothesis, max_n);
    if hyp_total == 0 {
        return Ok(0.0);
    }
    let (refs, ref_total) = ngram_counts(reference, max_n);
    let matched: usize = hyp
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    let precision = matched as f64 / hyp_total as f64;
    let recall = matched as f64 / ref_total as f64;
    Ok(precision.min(recall))
}

/// `exp(-(1/l) Σ log p)` over per-token log-probabilities.
pub fn perplexity_from_logprobs(logprobs: &[f64]) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::InvalidInput("perplexity needs at least one token".into()));
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Ok((-mean).exp())
}

/// Perplexity of `reference` under `backend` conditioned on `prompt`.
pub fn perplexity(backend: &dyn LlmBackend, prompt: &str, reference: &[String]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidInput("perplexity reference must be non-empty".into()));
    }
    let lps = backend.logprobs(prompt, reference).map_err(|e| match e {
        BackendError::Unsupported => Error::Capability(backend.id().to_owned()),
        other => Error::InvalidInput(format!("logprob call failed: {other}")),
    })?;
    if lps.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "backend returned {} log-probabilities for {} tokens",
            lps.len(),
            reference.len()
        )));
    }
    perplexity_from_logprobs(&lps)
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}
