use hybridrag_core::backend::EchoBackend;
use hybridrag_core::coordinator::{ApplyOutcome, Coordinator};
use hybridrag_core::engine::{Session, UserEvent};
use hybridrag_core::protocol::{MemoryRequest, MemoryResponse};
use hybridrag_core::types::{EngineConfig, MemoryEntry};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Type(Vec<u8>),
    Deliver,
    Replay(usize),
    Abandon,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => proptest::collection::vec(0u8..6, 1..6).prop_map(Op::Type),
        2 => Just(Op::Deliver),
        1 => (0usize..64).prop_map(Op::Replay),
        1 => Just(Op::Abandon),
    ]
}

fn words(ids: &[u8]) -> String {
    ids.iter().map(|i| format!(" w{i}")).collect()
}

fn response(seq: u64) -> MemoryResponse {
    MemoryResponse {
        session_id: "p".into(),
        request_seq: seq,
        entry: MemoryEntry::new([format!("bullet {seq}")], seq, 0).unwrap(),
        timings: Default::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn memory_stays_bounded_and_ordered(
        ops in proptest::collection::vec(op(), 1..80),
        capacity in 1usize..5,
        tau in 0usize..6,
    ) {
        let cfg = EngineConfig { memory_capacity: capacity, ..EngineConfig::default().with_tau(tau) };
        let mut c = Coordinator::new("p", &cfg);
        let mut issued: Vec<u64> = Vec::new();
        let mut applied: Vec<u64> = Vec::new();
        let mut texts = vec![String::new()];
        let mut steps = 0;
        for op in ops {
            let req = match op {
                Op::Type(ids) => {
                    let text = format!("{}{}", c.context().text, words(&ids));
                    texts.push(text.clone());
                    c.observe(text)
                }
                Op::Deliver => match c.in_flight() {
                    Some(seq) => {
                        prop_assert_eq!(c.apply_response(response(seq)).unwrap(), ApplyOutcome::Applied);
                        applied.push(seq);
                        c.poll()
                    }
                    None => None,
                },
                Op::Replay(i) if !issued.is_empty() => {
                    let seq = issued[i % issued.len()];
                    let before = c.last_applied_seq();
                    match c.apply_response(response(seq)).unwrap() {
                        ApplyOutcome::Stale => prop_assert!(seq <= before),
                        ApplyOutcome::Applied => {
                            prop_assert!(seq > before);
                            applied.push(seq);
                        }
                    }
                    c.poll()
                }
                Op::Replay(_) => None,
                Op::Abandon => match c.in_flight() {
                    Some(seq) => {
                        c.abandon(seq);
                        c.poll()
                    }
                    None => None,
                },
            };
            if let Some(r) = req {
                prop_assert_eq!(r.request_seq, issued.len() as u64 + 1);
                issued.push(r.request_seq);
            }
            let mem = c.memory();
            prop_assert!(mem.len() <= capacity);
            let seqs: Vec<u64> = mem.entries().map(|e| e.source_request_seq).collect();
            let start = applied.len().saturating_sub(capacity);
            prop_assert_eq!(&seqs[..], &applied[start..]);
            prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(texts.contains(&c.context().snapshot_at_last_request));
            prop_assert!(c.context().step_counter >= steps);
            steps = c.context().step_counter;
        }
    }

    #[test]
    fn session_replay_is_deterministic(
        deltas in proptest::collection::vec(proptest::collection::vec(0u8..8, 1..4), 1..40),
        tau in 0usize..8,
    ) {
        let run = || {
            let mut s = Session::new("p", EngineConfig::default().with_tau(tau)).unwrap();
            let mut log: Vec<(String, Option<MemoryRequest>, String)> = Vec::new();
            for (i, d) in deltas.iter().enumerate() {
                let req = s.step(UserEvent::Type(words(d))).unwrap();
                if let Some(r) = &req {
                    if i % 3 == 0 {
                        s.apply_response(response(r.request_seq)).unwrap();
                    }
                }
                let prompt = s.suggest(&EchoBackend::new()).unwrap().prompt_used;
                log.push((s.context_text().to_owned(), req, prompt));
            }
            log
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn suggest_does_not_wait_for_in_flight_request() {
    let mut s = Session::new("p", EngineConfig::default().with_tau(0)).unwrap();
    let first = s.step(UserEvent::Type("Air Mata Iboe".into())).unwrap().unwrap();
    s.apply_response(MemoryResponse {
        session_id: "p".into(),
        request_seq: first.request_seq,
        entry: MemoryEntry::new(["Air Mata Iboe was released in 1941"], first.request_seq, 0).unwrap(),
        timings: Default::default(),
    })
    .unwrap();
    let second = s.step(UserEvent::Type(" was".into())).unwrap().unwrap();
    assert_eq!(s.coordinator().in_flight(), Some(second.request_seq));
    let sug = s.suggest(&EchoBackend::new()).unwrap();
    assert_eq!(sug.text, "released in 1941");
    assert_eq!(sug.memory_seq_used, Some(first.request_seq));
}
