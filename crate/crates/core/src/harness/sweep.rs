//! Edit-distance threshold sweep.
//!
//! For each threshold the prompts are replayed as typing traces to count
//! requests and staleness. Utility is measured under lagged memory: memory is
//! generated from the prompt minus its last `tau` tokens, while the suggestion
//! is made for the whole prompt. Suggestions are scored against references
//! written by the cloud model from lagged memory and from up-to-date memory.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backend::CompletionRequest;
use crate::coordinator::MAX_QUERY_TOKENS;
use crate::engine::build_prompt_from_bullets;
use crate::error::{Error, Result};
use crate::harness::metrics::{gleu, mean, perplexity, GLEU_MAX_N};
use crate::harness::sim::{run_trace, typing_trace, Simulation};
use crate::memgen::generate_memory;
use crate::text::{detokenize, split_tokens, truncate_tokens};

/// Version of the CSV layout written by [`write_sweep_csv`].
pub const SWEEP_CSV_VERSION: u32 = 1;

pub const SWEEP_CSV_HEADER: &str = "version,tau,prompts,requests_issued,mean_staleness,\
gleu_sync_ref,gleu_async_ref,ppl_sync_ref,ppl_async_ref";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: usize,
    pub prompts: usize,
    pub requests_issued: usize,
    pub mean_staleness: Option<f64>,
    /// Mean GLEU against references generated with up-to-date memory.
    pub gleu_sync_ref: Option<f64>,
    /// Mean GLEU against references generated with the same lagged memory.
    pub gleu_async_ref: Option<f64>,
    pub ppl_sync_ref: Option<f64>,
    pub ppl_async_ref: Option<f64>,
}

/// Memory bullets for `query`, or none when retrieval or generation fails.
fn memory_for(query: &str, sim: &Simulation<'_>) -> Vec<String> {
    let Some(retriever) = sim.retriever else {
        return Vec::new();
    };
    if query.trim().is_empty() {
        return Vec::new();
    }
    generate_memory(query, retriever, sim.cloud, sim.engine)
        .map(|m| m.bullets)
        .unwrap_or_default()
}

fn window_query(tokens: &[String]) -> String {
    detokenize(&tokens[tokens.len().saturating_sub(MAX_QUERY_TOKENS)..])
}

#[derive(Default)]
struct Scores {
    gleu_sync: Option<f64>,
    gleu_async: Option<f64>,
    ppl_sync: Option<f64>,
    ppl_async: Option<f64>,
}

fn score_prompt(prompt: &str, tau: usize, sim: &Simulation<'_>) -> Result<Scores> {
    let tokens = split_tokens(prompt);
    if tokens.is_empty() {
        return Ok(Scores::default());
    }
    let cap = sim.engine.max_suggest_tokens;
    let lagged_len = tokens.len().saturating_sub(tau);
    let lagged = memory_for(&window_query(&tokens[..lagged_len]), sim);
    let fresh = memory_for(&window_query(&tokens), sim);

    let client_prompt = build_prompt_from_bullets(prompt, &lagged);
    let hyp = sim
        .client
        .complete(&CompletionRequest::greedy(client_prompt.clone(), cap))
        .map(|t| split_tokens(&truncate_tokens(&t, cap)))
        .map_err(Error::SuggestionFailed)?;

    let score = |bullets: &[String]| -> Result<(Option<f64>, Option<f64>)> {
        let req = CompletionRequest::greedy(build_prompt_from_bullets(prompt, bullets), cap);
        let text = sim.cloud.complete(&req).map_err(Error::SuggestionFailed)?;
        let reference = split_tokens(&truncate_tokens(&text, cap));
        if reference.is_empty() {
            return Ok((None, None));
        }
        let ppl = match perplexity(sim.client, &client_prompt, &reference) {
            Ok(p) => Some(p),
            Err(Error::Capability(_)) => None,
            Err(e) => return Err(e),
        };
        Ok((Some(gleu(&hyp, &reference, GLEU_MAX_N)?), ppl))
    };
    let (gleu_sync, ppl_sync) = score(&fresh)?;
    let (gleu_async, ppl_async) = score(&lagged)?;
    Ok(Scores { gleu_sync, gleu_async, ppl_sync, ppl_async })
}

/// Runs every threshold in `taus` over `prompts`. Prompts are typed word by
/// word, one word every `typing_interval_ms`.
pub fn threshold_sweep(
    prompts: &[String],
    taus: &[usize],
    sim: &Simulation<'_>,
    typing_interval_ms: f64,
) -> Result<Vec<SweepRow>> {
    if taus.is_empty() {
        return Err(Error::InvalidInput("no threshold values given".into()));
    }
    if prompts.is_empty() {
        return Err(Error::InvalidInput("no prompts given".into()));
    }
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let engine = sim.engine.clone().with_tau(tau);
        let cell = Simulation { engine: &engine, ..*sim };
        let mut requests = 0;
        let mut staleness = Vec::new();
        let (mut gs, mut ga, mut ps, mut pa) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for prompt in prompts {
            let trace = typing_trace(prompt, typing_interval_ms);
            if trace.is_empty() {
                continue;
            }
            let m = run_trace(&trace, &cell)?;
            requests += m.requests_issued;
            staleness.extend(m.staleness_at_suggest.iter().map(|s| s.tokens as f64));
            let s = score_prompt(prompt, tau, &cell)?;
            gs.extend(s.gleu_sync);
            ga.extend(s.gleu_async);
            ps.extend(s.ppl_sync);
            pa.extend(s.ppl_async);
        }
        rows.push(SweepRow {
            tau,
            prompts: prompts.len(),
            requests_issued: requests,
            mean_staleness: mean(&staleness),
            gleu_sync_ref: mean(&gs),
            gleu_async_ref: mean(&ga),
            ppl_sync_ref: mean(&ps),
            ppl_async_ref: mean(&pa),
        });
    }
    Ok(rows)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            SWEEP_CSV_VERSION,
            r.tau,
            r.prompts,
            r.requests_issued,
            opt(r.mean_staleness),
            opt(r.gleu_sync_ref),
            opt(r.gleu_async_ref),
            opt(r.ppl_sync_ref),
            opt(r.ppl_async_ref),
        )?;
    }
    Ok(())
}
