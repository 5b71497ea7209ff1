//! Networking for hybridrag: the cloud memory service, HTTP clients for the
//! service and for remote LLMs, and the client-engine WebSocket.

pub mod config;
pub mod engine;
pub mod remote;
pub mod service;

pub use config::{BackendDescriptor, ServiceConfig};
pub use engine::{EngineState, LocalCloud, MemoryTransport};
pub use remote::{CloudClient, RemoteBackend};
pub use service::CloudService;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] hybridrag_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;
