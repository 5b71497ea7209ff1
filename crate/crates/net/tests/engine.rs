use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use hybridrag_core::backend::mock::DelayedBackend;
use hybridrag_core::backend::{EchoBackend, MockCloudBackend};
use hybridrag_core::protocol::{InboundMessage, OutboundMessage};
use hybridrag_core::retriever::{Document, HashedBowEmbedder, Retriever};
use hybridrag_core::types::EngineConfig;
use hybridrag_net::{CloudClient, CloudService, EngineState, LocalCloud, MemoryTransport, ServiceConfig};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn docs() -> Vec<Document> {
    vec![
        Document::new("film", "Air Mata Iboe is a 1941 film directed by Njoo Cheong Seng. It starred Fifi Young."),
        Document::new("harbour", "The harbour froze in the winter of 1902. Ships waited outside for weeks."),
    ]
}

async fn start_engine(cfg: EngineConfig, cloud: Arc<dyn MemoryTransport>) -> Socket {
    let state = EngineState::new(cfg, Arc::new(EchoBackend::new()), cloud).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(state.serve(listener));
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/v1/session")).await.unwrap();
    ws
}

async fn send(ws: &mut Socket, msg: &InboundMessage) {
    ws.send(Message::text(serde_json::to_string(msg).unwrap())).await.unwrap();
}

async fn recv(ws: &mut Socket) -> OutboundMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(t.as_str()).unwrap();
        }
    }
}

/// Reads until a suggestion arrives; memory updates seen on the way are collected.
async fn next_suggestion(ws: &mut Socket, updates: &mut Vec<OutboundMessage>) -> OutboundMessage {
    loop {
        match recv(ws).await {
            m @ OutboundMessage::Suggestion { .. } => return m,
            m @ OutboundMessage::MemoryUpdate { .. } => updates.push(m),
            other => panic!("unexpected {other:?}"),
        }
    }
}

fn typed(s: &str) -> InboundMessage {
    InboundMessage::Type { payload: s.into() }
}

#[tokio::test(flavor = "multi_thread")]
async fn local_cloud_session_applies_memory() {
    let cfg = EngineConfig::default().with_tau(0);
    let r = Retriever::from_documents(&docs(), Box::new(HashedBowEmbedder::default()), 128).unwrap();
    let cloud = Arc::new(LocalCloud::new(r, Arc::new(MockCloudBackend::new()), cfg.clone()));
    let mut ws = start_engine(cfg, cloud).await;
    let mut updates = Vec::new();
    send(&mut ws, &typed("Air Mata Iboe")).await;
    next_suggestion(&mut ws, &mut updates).await;
    while updates.is_empty() {
        match recv(&mut ws).await {
            m @ OutboundMessage::MemoryUpdate { .. } => updates.push(m),
            other => panic!("unexpected {other:?}"),
        }
    }
    let OutboundMessage::MemoryUpdate { bullets, request_seq, staleness_tokens } = &updates[0] else { unreachable!() };
    assert_eq!(*request_seq, 1);
    assert_eq!(*staleness_tokens, 0);
    assert!(bullets.iter().any(|b| b.contains("1941")));
    send(&mut ws, &typed(" is a")).await;
    match next_suggestion(&mut ws, &mut updates).await {
        OutboundMessage::Suggestion { text, memory_seq_used, .. } => {
            assert_eq!(memory_seq_used, Some(1));
            assert!(text.starts_with("1941"), "{text}");
        }
        _ => unreachable!(),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn accept_and_errors_over_the_socket() {
    let cfg = EngineConfig::default().with_tau(usize::MAX);
    let r = Retriever::from_documents(&docs(), Box::new(HashedBowEmbedder::default()), 128).unwrap();
    let cloud = Arc::new(LocalCloud::new(r, Arc::new(MockCloudBackend::new()), cfg.clone()));
    let mut ws = start_engine(cfg, cloud).await;
    send(&mut ws, &InboundMessage::Accept {}).await;
    assert!(matches!(recv(&mut ws).await, OutboundMessage::Error { code, .. } if code == "no_pending_suggestion"));
    ws.send(Message::text("{\"type\":\"dance\"}")).await.unwrap();
    assert!(matches!(recv(&mut ws).await, OutboundMessage::Error { code, .. } if code == "bad_message"));
    let mut updates = Vec::new();
    send(&mut ws, &typed("The harbour froze")).await;
    next_suggestion(&mut ws, &mut updates).await;
    send(&mut ws, &InboundMessage::Accept {}).await;
    assert!(matches!(next_suggestion(&mut ws, &mut updates).await, OutboundMessage::Suggestion { .. }));
    send(&mut ws, &InboundMessage::Reject { payload: " slowly".into() }).await;
    assert!(matches!(next_suggestion(&mut ws, &mut updates).await, OutboundMessage::Suggestion { .. }));
    assert!(updates.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn suggestions_flow_while_cloud_is_slow() {
    let svc_cfg = ServiceConfig::default();
    let slow = DelayedBackend::new(MockCloudBackend::new(), Duration::from_millis(400));
    let svc = CloudService::new(&svc_cfg, Arc::new(slow)).unwrap();
    svc.ingest(&docs()).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(svc.serve(listener));

    let cloud = Arc::new(CloudClient::new(base, None, Duration::from_secs(10)));
    let mut ws = start_engine(EngineConfig::default().with_tau(1), cloud).await;
    let mut updates = Vec::new();
    let words = "The harbour froze in the winter of 1902 and ships waited outside".split(' ');
    for (i, w) in words.enumerate() {
        let payload = if i == 0 { w.to_owned() } else { format!(" {w}") };
        let started = std::time::Instant::now();
        send(&mut ws, &typed(&payload)).await;
        let OutboundMessage::Suggestion { latency_ms, .. } = next_suggestion(&mut ws, &mut updates).await else {
            unreachable!()
        };
        assert!(started.elapsed() < Duration::from_millis(300));
        assert!(latency_ms < 300.0);
    }
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    while updates.is_empty() && tokio::time::Instant::now() < deadline {
        if let Ok(Some(Ok(Message::Text(t)))) = tokio::time::timeout(Duration::from_millis(500), ws.next()).await {
            updates.push(serde_json::from_str(t.as_str()).unwrap());
        }
    }
    let seqs: Vec<u64> = updates
        .iter()
        .map(|m| match m {
            OutboundMessage::MemoryUpdate { request_seq, .. } => *request_seq,
            other => panic!("unexpected {other:?}"),
        })
        .collect();
    assert!(!seqs.is_empty());
    assert_eq!(seqs[0], 1);
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
}
