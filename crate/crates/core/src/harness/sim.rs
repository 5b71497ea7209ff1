//! Discrete-event replay of typing traces on a virtual clock.
//!
//! User events, suggestion completions and memory arrivals are scheduled on a
//! single queue ordered by `(time, class, insertion order)`. Time is integer
//! microseconds; trace files and latency models speak milliseconds.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::LlmBackend;
use crate::coordinator::ApplyOutcome;
use crate::engine::{Session, Suggestion, UserEvent};
use crate::error::{Error, Result};
use crate::harness::metrics::{gleu, mean, perplexity, GLEU_MAX_N};
use crate::memgen::generate_memory;
use crate::protocol::{MemoryRequest, MemoryResponse, StageTimings};
use crate::retriever::Retriever;
use crate::text::split_tokens;
use crate::types::{EngineConfig, MemoryEntry};

/// Virtual time in microseconds.
pub type Micros = u64;

fn ms_to_micros(ms: f64) -> Micros {
    (ms * 1000.0).round() as Micros
}

fn micros_to_ms(us: Micros) -> f64 {
    us as f64 / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Type,
    Accept,
    Reject,
}

/// One scripted user action. `at` is in virtual milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub at: f64,
    pub kind: EventKind,
    #[serde(default)]
    pub payload: String,
}

impl TraceEvent {
    pub fn typed(at: f64, payload: impl Into<String>) -> Self {
        Self { at, kind: EventKind::Type, payload: payload.into() }
    }

    pub fn accept(at: f64) -> Self {
        Self { at, kind: EventKind::Accept, payload: String::new() }
    }

    pub fn reject(at: f64, payload: impl Into<String>) -> Self {
        Self { at, kind: EventKind::Reject, payload: payload.into() }
    }
}

/// Checks the trace is non-empty with finite, non-negative, non-decreasing times.
pub fn validate_trace(trace: &[TraceEvent]) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::InvalidInput("trace is empty".into()));
    }
    let mut last = 0.0;
    for (i, ev) in trace.iter().enumerate() {
        if !ev.at.is_finite() || ev.at < 0.0 {
            return Err(Error::InvalidInput(format!("event {i}: invalid time {}", ev.at)));
        }
        if ev.at < last {
            return Err(Error::InvalidInput(format!("event {i}: time goes backwards")));
        }
        last = ev.at;
    }
    Ok(())
}

/// Parses a JSON Lines trace, skipping blank lines.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<TraceEvent>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_trace<W: Write>(mut w: W, trace: &[TraceEvent]) -> Result<()> {
    for ev in trace {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Word-by-word typing of `text`, one event every `interval_ms` starting at 0.
/// Each event carries the word together with its leading whitespace.
pub fn typing_trace(text: &str, interval_ms: f64) -> Vec<TraceEvent> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                out.push(&text[start..i]);
                start = i;
                in_word = false;
            }
        } else {
            in_word = true;
        }
    }
    if in_word {
        out.push(&text[start..]);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, w)| TraceEvent::typed(i as f64 * interval_ms, w))
        .collect()
}

/// A non-negative duration in milliseconds: a constant or a uniform range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DurationDist {
    Fixed(f64),
    Uniform { min_ms: f64, max_ms: f64 },
}

impl DurationDist {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DurationDist::Fixed(ms) => ms.is_finite() && ms >= 0.0,
            DurationDist::Uniform { min_ms, max_ms } => {
                min_ms.is_finite() && max_ms.is_finite() && min_ms >= 0.0 && min_ms <= max_ms
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid duration {self:?}")))
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Micros {
        match *self {
            DurationDist::Fixed(ms) => ms_to_micros(ms),
            DurationDist::Uniform { min_ms, max_ms } => {
                let (lo, hi) = (ms_to_micros(min_ms), ms_to_micros(max_ms));
                rng.random_range(lo..=hi)
            }
        }
    }
}

/// Stage latencies of the client/cloud pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub client_infer: DurationDist,
    pub retrieval: DurationDist,
    pub generation: DurationDist,
    pub network_rtt: DurationDist,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::fixed(20.0, 100.0, 880.0, 100.0)
    }
}

impl LatencyModel {
    pub fn fixed(client_infer: f64, retrieval: f64, generation: f64, network_rtt: f64) -> Self {
        Self {
            client_infer: DurationDist::Fixed(client_infer),
            retrieval: DurationDist::Fixed(retrieval),
            generation: DurationDist::Fixed(generation),
            network_rtt: DurationDist::Fixed(network_rtt),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.client_infer.validate()?;
        self.retrieval.validate()?;
        self.generation.validate()?;
        self.network_rtt.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Suggestions use whatever memory is present; cloud work runs in the background.
    Async,
    /// Every refresh blocks the suggestion on the full cloud round trip.
    Sync,
}

/// Memory staleness observed when a suggestion started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StalenessSample {
    pub tokens: usize,
    pub in_flight: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuedRequest {
    pub request_seq: u64,
    pub event_index: usize,
    pub query_text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Virtual latency of every suggestion started, in milliseconds.
    pub suggestion_latencies_ms: Vec<f64>,
    pub requests_issued: usize,
    pub responses_applied: usize,
    pub stale_responses: usize,
    pub failed_requests: usize,
    pub staleness_at_suggest: Vec<StalenessSample>,
    /// GLEU of each suggestion against the text the user typed next.
    pub gleu_scores: Vec<f64>,
    /// Client-model perplexity of the text the user typed next.
    pub perplexities: Vec<f64>,
    pub suggestions_completed: usize,
    pub suggestion_failures: usize,
    /// Accept events that found no pending suggestion.
    pub skipped_events: usize,
    pub requests: Vec<IssuedRequest>,
}

impl RunMetrics {
    pub fn mean_latency_ms(&self) -> Option<f64> {
        mean(&self.suggestion_latencies_ms)
    }

    pub fn mean_staleness(&self) -> Option<f64> {
        let xs: Vec<f64> = self.staleness_at_suggest.iter().map(|s| s.tokens as f64).collect();
        mean(&xs)
    }

    pub fn mean_gleu(&self) -> Option<f64> {
        mean(&self.gleu_scores)
    }

    pub fn mean_perplexity(&self) -> Option<f64> {
        mean(&self.perplexities)
    }
}

/// Everything a replay needs besides the trace itself.
#[derive(Clone, Copy)]
pub struct Simulation<'a> {
    pub engine: &'a EngineConfig,
    pub latency: &'a LatencyModel,
    /// Corpus for cloud-side retrieval; without one every request fails.
    pub retriever: Option<&'a Retriever>,
    pub client: &'a dyn LlmBackend,
    pub cloud: &'a dyn LlmBackend,
    pub seed: u64,
}

/// Replays `trace` in the normal asynchronous mode.
pub fn run_trace(trace: &[TraceEvent], sim: &Simulation<'_>) -> Result<RunMetrics> {
    run_trace_mode(trace, sim, SimMode::Async)
}

pub fn run_trace_mode(trace: &[TraceEvent], sim: &Simulation<'_>, mode: SimMode) -> Result<RunMetrics> {
    validate_trace(trace)?;
    sim.engine.validate()?;
    sim.latency.validate()?;
    Runner::new(trace, sim, mode)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub sync_mean_latency_ms: f64,
    pub async_mean_latency_ms: f64,
    pub speedup: f64,
}

/// Runs the trace in both modes and compares mean suggestion latency.
pub fn compare_sync_async(trace: &[TraceEvent], sim: &Simulation<'_>) -> Result<SpeedupReport> {
    let sync = run_trace_mode(trace, sim, SimMode::Sync)?;
    let async_ = run_trace_mode(trace, sim, SimMode::Async)?;
    let (Some(s), Some(a)) = (sync.mean_latency_ms(), async_.mean_latency_ms()) else {
        return Err(Error::InvalidInput("trace produced no suggestions".into()));
    };
    if a <= 0.0 {
        return Err(Error::InvalidInput("async latency is zero; speedup undefined".into()));
    }
    Ok(SpeedupReport {
        sync_mean_latency_ms: s,
        async_mean_latency_ms: a,
        speedup: s / a,
    })
}

enum SimEvent {
    User(usize),
    SuggestionReady { generation: u64, suggestion: Suggestion },
    MemoryArrival { request_seq: u64, outcome: Result<(Vec<String>, StageTimings)> },
}

impl SimEvent {
    fn class(&self) -> u8 {
        match self {
            SimEvent::MemoryArrival { .. } => 0,
            SimEvent::SuggestionReady { .. } => 1,
            SimEvent::User(_) => 2,
        }
    }
}

struct Runner<'a, 'b> {
    trace: &'b [TraceEvent],
    sim: &'b Simulation<'a>,
    mode: SimMode,
    rng: ChaCha8Rng,
    session: Session,
    queue: BinaryHeap<Reverse<(Micros, u8, u64)>>,
    slots: Vec<Option<SimEvent>>,
    generation: u64,
    future: Vec<Vec<String>>,
    logprobs_supported: bool,
    metrics: RunMetrics,
}

impl<'a, 'b> Runner<'a, 'b> {
    fn new(trace: &'b [TraceEvent], sim: &'b Simulation<'a>, mode: SimMode) -> Result<Self> {
        let cap = sim.engine.max_suggest_tokens;
        let mut future = vec![Vec::new(); trace.len()];
        let mut upcoming: Vec<String> = Vec::new();
        for i in (0..trace.len()).rev() {
            future[i] = upcoming.iter().take(cap).cloned().collect();
            let ev = &trace[i];
            if ev.kind != EventKind::Accept {
                let mut toks = split_tokens(&ev.payload);
                toks.extend(upcoming.into_iter().take(cap));
                upcoming = toks;
            }
        }
        Ok(Self {
            trace,
            sim,
            mode,
            rng: ChaCha8Rng::seed_from_u64(sim.seed),
            session: Session::new("sim", sim.engine.clone())?,
            queue: BinaryHeap::new(),
            slots: Vec::new(),
            generation: 0,
            future,
            logprobs_supported: true,
            metrics: RunMetrics::default(),
        })
    }

    fn schedule(&mut self, at: Micros, ev: SimEvent) {
        let id = self.slots.len() as u64;
        self.queue.push(Reverse((at, ev.class(), id)));
        self.slots.push(Some(ev));
    }

    fn run(mut self) -> Result<RunMetrics> {
        for (i, ev) in self.trace.iter().enumerate() {
            self.schedule(ms_to_micros(ev.at), SimEvent::User(i));
        }
        while let Some(Reverse((now, _, id))) = self.queue.pop() {
            let ev = self.slots[id as usize].take().expect("event popped twice");
            match ev {
                SimEvent::User(i) => self.on_user(now, i)?,
                SimEvent::SuggestionReady { generation, suggestion } => {
                    if generation == self.generation {
                        self.metrics.suggestions_completed += 1;
                        self.session.set_pending(Some(suggestion));
                    }
                }
                SimEvent::MemoryArrival { request_seq, outcome } => {
                    self.on_memory(now, request_seq, outcome)?;
                }
            }
        }
        Ok(self.metrics)
    }

    fn on_user(&mut self, now: Micros, i: usize) -> Result<()> {
        let ev = &self.trace[i];
        let has_pending = self.session.pending().is_some();
        let user_event = match ev.kind {
            EventKind::Type => UserEvent::Type(ev.payload.clone()),
            EventKind::Reject if has_pending => UserEvent::Reject(ev.payload.clone()),
            EventKind::Reject => UserEvent::Type(ev.payload.clone()),
            EventKind::Accept if has_pending => UserEvent::Accept,
            EventKind::Accept => {
                self.metrics.skipped_events += 1;
                return Ok(());
            }
        };
        // A new user action supersedes any suggestion still being computed.
        self.generation += 1;
        let request = self.session.step(user_event)?;
        let mut blocking = 0;
        if let Some(req) = request {
            self.record_request(&req, i);
            match self.mode {
                SimMode::Async => self.dispatch(now, req),
                SimMode::Sync => blocking = self.run_blocking(now, req)?,
            }
        }
        self.start_suggestion(now, i, blocking)
    }

    fn record_request(&mut self, req: &MemoryRequest, event_index: usize) {
        self.metrics.requests_issued += 1;
        self.metrics.requests.push(IssuedRequest {
            request_seq: req.request_seq,
            event_index,
            query_text: req.query_text.clone(),
        });
    }

    fn cloud_work(&mut self, req: &MemoryRequest) -> (Micros, Result<(Vec<String>, StageTimings)>) {
        let rtt = self.sim.latency.network_rtt.sample(&mut self.rng);
        let retrieval = self.sim.latency.retrieval.sample(&mut self.rng);
        let generation = self.sim.latency.generation.sample(&mut self.rng);
        let timings = StageTimings {
            retrieval_ms: micros_to_ms(retrieval),
            generation_ms: micros_to_ms(generation),
        };
        let mut cfg = self.sim.engine.clone();
        if let Some(k) = req.k {
            cfg.k = k;
        }
        let outcome = match self.sim.retriever {
            Some(r) => generate_memory(&req.query_text, r, self.sim.cloud, &cfg).map(|m| (m.bullets, timings)),
            None => Err(Error::EmptyIndex),
        };
        (rtt + retrieval + generation, outcome)
    }

    fn dispatch(&mut self, now: Micros, req: MemoryRequest) {
        let (delay, outcome) = self.cloud_work(&req);
        self.schedule(now + delay, SimEvent::MemoryArrival { request_seq: req.request_seq, outcome });
    }

    // Sync mode: the refresh completes before the suggestion is computed.
    fn run_blocking(&mut self, now: Micros, req: MemoryRequest) -> Result<Micros> {
        let (delay, outcome) = self.cloud_work(&req);
        if let Some(next) = self.deliver(now + delay, req.request_seq, outcome)? {
            // The snapshot equals the current text after a synchronous apply,
            // so a follow-up can only come from a failed request.
            self.record_request(&next, usize::MAX);
            self.session.abandon(next.request_seq);
        }
        Ok(delay)
    }

    fn on_memory(
        &mut self,
        now: Micros,
        request_seq: u64,
        outcome: Result<(Vec<String>, StageTimings)>,
    ) -> Result<()> {
        if let Some(next) = self.deliver(now, request_seq, outcome)? {
            let idx = self.metrics.requests.last().map_or(0, |r| r.event_index);
            self.record_request(&next, idx);
            self.dispatch(now, next);
        }
        Ok(())
    }

    fn deliver(
        &mut self,
        at: Micros,
        request_seq: u64,
        outcome: Result<(Vec<String>, StageTimings)>,
    ) -> Result<Option<MemoryRequest>> {
        let entry = outcome.and_then(|(bullets, timings)| {
            Ok((MemoryEntry::new(bullets, request_seq, at / 1000)?, timings))
        });
        match entry {
            Ok((entry, timings)) => {
                let resp = MemoryResponse {
                    session_id: "sim".into(),
                    request_seq,
                    entry,
                    timings,
                };
                let (outcome, next) = self.session.apply_response(resp)?;
                match outcome {
                    ApplyOutcome::Applied => self.metrics.responses_applied += 1,
                    ApplyOutcome::Stale => self.metrics.stale_responses += 1,
                }
                Ok(next)
            }
            Err(_) => {
                self.metrics.failed_requests += 1;
                Ok(self.session.abandon(request_seq))
            }
        }
    }

    fn start_suggestion(&mut self, now: Micros, i: usize, blocking: Micros) -> Result<()> {
        if self.session.context_text().is_empty() {
            return Ok(());
        }
        if let Some(tokens) = self.session.staleness_tokens() {
            self.metrics.staleness_at_suggest.push(StalenessSample {
                tokens,
                in_flight: self.session.coordinator().in_flight().is_some(),
            });
        }
        let infer = self.sim.latency.client_infer.sample(&mut self.rng);
        let latency = blocking + infer;
        self.metrics.suggestion_latencies_ms.push(micros_to_ms(latency));
        let mut suggestion = match self.session.suggest(self.sim.client) {
            Ok(s) => s,
            Err(Error::SuggestionFailed(_)) => {
                self.metrics.suggestion_failures += 1;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        suggestion.latency = std::time::Duration::from_micros(latency);
        let reference = &self.future[i];
        if !reference.is_empty() {
            let hyp = split_tokens(&suggestion.text);
            self.metrics.gleu_scores.push(gleu(&hyp, reference, GLEU_MAX_N)?);
            if self.logprobs_supported {
                match perplexity(self.sim.client, &suggestion.prompt_used, reference) {
                    Ok(p) => self.metrics.perplexities.push(p),
                    Err(Error::Capability(_)) => self.logprobs_supported = false,
                    Err(_) => {}
                }
            }
        }
        let generation = self.generation;
        self.schedule(now + latency, SimEvent::SuggestionReady { generation, suggestion });
        Ok(())
    }
}
