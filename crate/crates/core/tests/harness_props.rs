use std::collections::HashMap;

use hybridrag_core::backend::{BackendError, EchoBackend, LlmBackend, MockCloudBackend};
use hybridrag_core::harness::dataset::{prepare_training_triplets, sentence_chunks};
use hybridrag_core::harness::metrics::{gleu, perplexity, perplexity_from_logprobs};
use hybridrag_core::harness::sim::{
    run_trace, typing_trace, DurationDist, EventKind, LatencyModel, Simulation, TraceEvent,
};
use hybridrag_core::harness::sweep::threshold_sweep;
use hybridrag_core::retriever::{read_corpus_file, Document, Embedder, HashedBowEmbedder, Retriever};
use hybridrag_core::text::split_tokens;
use hybridrag_core::types::EngineConfig;
use proptest::prelude::*;

const CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus.jsonl");
const PROMPTS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/prompts.jsonl");

fn fixture_docs() -> Vec<Document> {
    read_corpus_file(CORPUS).unwrap()
}

fn fixture_prompts() -> Vec<String> {
    std::fs::read_to_string(PROMPTS)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["prompt"].as_str().unwrap().to_owned())
        .collect()
}

fn retriever(docs: &[Document]) -> Retriever {
    Retriever::from_documents(docs, Box::new(HashedBowEmbedder::default()), 128).unwrap()
}

fn toks() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 0..16)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

struct Table(HashMap<String, f64>);

impl LlmBackend for Table {
    fn id(&self) -> &str {
        "table"
    }

    fn complete(&self, _: &hybridrag_core::backend::CompletionRequest) -> Result<String, BackendError> {
        Ok(String::new())
    }

    fn logprobs(&self, _: &str, continuation: &[String]) -> Result<Vec<f64>, BackendError> {
        Ok(continuation.iter().map(|t| self.0[t]).collect())
    }
}

proptest! {
    #[test]
    fn gleu_is_bounded(h in toks(), r in toks()) {
        prop_assume!(!r.is_empty());
        let g = gleu(&h, &r, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
    }

    #[test]
    fn gleu_self_is_one(x in toks()) {
        prop_assume!(!x.is_empty());
        prop_assert_eq!(gleu(&x, &x, 4).unwrap(), 1.0);
    }

    #[test]
    fn gleu_symmetric_for_equal_lengths(pair in (1usize..16).prop_flat_map(|n| {
        let t = proptest::collection::vec(prop::sample::select(vec!["a", "b", "c"]), n);
        (t.clone(), t)
    })) {
        let (a, b) = pair;
        prop_assert_eq!(gleu(&a, &b, 4).unwrap(), gleu(&b, &a, 4).unwrap());
    }

    #[test]
    fn perplexity_matches_direct_evaluation(lps in proptest::collection::vec(-12.0f64..0.0, 1..10)) {
        let table: HashMap<String, f64> = lps.iter().enumerate().map(|(i, &lp)| (format!("t{i}"), lp)).collect();
        let reference: Vec<String> = (0..lps.len()).map(|i| format!("t{i}")).collect();
        let got = perplexity(&Table(table), "prompt", &reference).unwrap();
        let direct = (-lps.iter().sum::<f64>() / lps.len() as f64).exp();
        prop_assert!((got - direct).abs() <= direct * 1e-12);
        prop_assert_eq!(perplexity_from_logprobs(&lps).unwrap(), got);
    }

    #[test]
    fn sentence_chunks_respect_bounds(words in proptest::collection::vec("[a-z]{1,6}\\.?", 0..400)) {
        for c in sentence_chunks(&words.join(" "), 16, 128) {
            let n = split_tokens(&c).len();
            prop_assert!((16..=128).contains(&n), "{}", n);
        }
    }
}

fn cloud_heavy(rtt_ms: f64, generation_ms: f64) -> LatencyModel {
    LatencyModel {
        client_infer: DurationDist::Uniform { min_ms: 15.0, max_ms: 25.0 },
        retrieval: DurationDist::Fixed(100.0),
        generation: DurationDist::Fixed(generation_ms),
        network_rtt: DurationDist::Fixed(rtt_ms),
    }
}

#[test]
fn async_latency_ignores_cloud_latency() {
    let docs = fixture_docs();
    let r = retriever(&docs);
    let cfg = EngineConfig::default().with_tau(2);
    let (client, cloud) = (EchoBackend::new(), MockCloudBackend::new());
    let trace = typing_trace(&fixture_prompts().join(" "), 150.0);
    let mut seen = Vec::new();
    for rtt in [0.0, 1e3, 1e6] {
        let lat = cloud_heavy(rtt, 880.0);
        let sim = Simulation { engine: &cfg, latency: &lat, retriever: Some(&r), client: &client, cloud: &cloud, seed: 5 };
        let m = run_trace(&trace, &sim).unwrap();
        assert!(m.requests_issued > 0);
        seen.push(m.suggestion_latencies_ms);
    }
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[0], seen[2]);
}

#[test]
fn simulation_is_deterministic_and_bounded() {
    let docs = fixture_docs();
    let r = retriever(&docs);
    let cfg = EngineConfig::default().with_tau(4);
    let lat = cloud_heavy(100.0, 880.0);
    let (client, cloud) = (EchoBackend::new(), MockCloudBackend::new());
    let mut trace = typing_trace(&fixture_prompts()[..6].join(" "), 200.0);
    let end = trace.last().unwrap().at;
    trace.push(TraceEvent::accept(end + 500.0));
    trace.push(TraceEvent::reject(end + 900.0, " and then"));
    let sim = Simulation { engine: &cfg, latency: &lat, retriever: Some(&r), client: &client, cloud: &cloud, seed: 11 };
    let a = run_trace(&trace, &sim).unwrap();
    assert_eq!(a, run_trace(&trace, &sim).unwrap());
    assert!(a.requests_issued <= trace.len());
    assert!(a.requests.iter().all(|q| split_tokens(&q.query_text).len() <= 64));
    assert!(!a.gleu_scores.is_empty());
    assert_eq!(a.gleu_scores.len(), a.perplexities.len());
    assert!(trace.iter().filter(|e| e.kind == EventKind::Type).count() > 10);
}

#[test]
fn triplet_bounds_hold_across_seeds() {
    let docs = fixture_docs();
    let make: &dyn Fn() -> Box<dyn Embedder> = &|| Box::new(HashedBowEmbedder::default());
    let cloud = MockCloudBackend::new();
    for seed in 0..10 {
        let data = prepare_training_triplets(&docs, make, &cloud, &EngineConfig::default(), seed).unwrap();
        assert_eq!(data.records.len(), docs.len());
        for r in &data.records {
            assert!((16..=128).contains(&r.chunk_tokens));
            assert!((0.125..=0.5).contains(&r.split_ratio));
            let lo = (0.125 * r.chunk_tokens as f64).floor() as usize;
            let hi = (0.5 * r.chunk_tokens as f64).floor() as usize;
            assert!((lo..=hi).contains(&r.prompt_tokens));
            assert!(!r.triplet.memory.is_empty());
        }
    }
}

#[test]
fn fixture_sweep_trends() {
    let docs = fixture_docs();
    let r = retriever(&docs);
    let cfg = EngineConfig::default();
    let lat = LatencyModel::default();
    let (client, cloud) = (EchoBackend::new(), MockCloudBackend::new());
    let sim = Simulation { engine: &cfg, latency: &lat, retriever: Some(&r), client: &client, cloud: &cloud, seed: 1 };
    let rows = threshold_sweep(&fixture_prompts(), &[0, 5, 10, 15, 20], &sim, 250.0).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].requests_issued <= w[0].requests_issued);
        assert!(w[1].gleu_sync_ref.unwrap() <= w[0].gleu_sync_ref.unwrap());
    }
    assert_eq!(rows[0].gleu_sync_ref, Some(1.0));
}
