//! Cloud service configuration, loaded from TOML or JSON.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use hybridrag_core::backend::{EchoBackend, LlmBackend, MockCloudBackend, TableBackend};
use hybridrag_core::retriever::{Embedder, HashedBowEmbedder};
use hybridrag_core::types::EngineConfig;
use serde::{Deserialize, Serialize};

use crate::remote::RemoteBackend;
use crate::{NetError, Result};

/// Overrides the remote backend's bearer token.
pub const BACKEND_TOKEN_ENV: &str = "HYBRIDRAG_BACKEND_TOKEN";
/// Overrides the token clients must present to the service.
pub const AUTH_TOKEN_ENV: &str = "HYBRIDRAG_AUTH_TOKEN";

const HASHED_BOW_PREFIX: &str = "hashed-bow-v1-";

/// Which LLM answers takeaway prompts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendDescriptor {
    #[default]
    MockCloud,
    Echo,
    Table { path: PathBuf },
    Remote {
        endpoint: String,
        #[serde(default)]
        token: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen_address: String,
    pub corpus_path: Option<PathBuf>,
    pub embedder_id: String,
    pub backend: BackendDescriptor,
    pub k: usize,
    pub chunk_tokens: usize,
    pub timeout_ms: u64,
    pub max_concurrent_calls: usize,
    pub max_memory_tokens: usize,
    pub passages_per_call: usize,
    pub prompt_token_budget: usize,
    /// Shared bearer token required on `POST /v1/memory` when set.
    pub auth_token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            listen_address: "127.0.0.1:8080".into(),
            corpus_path: None,
            embedder_id: HashedBowEmbedder::default().id().to_owned(),
            backend: BackendDescriptor::default(),
            k: e.k,
            chunk_tokens: e.chunk_tokens,
            timeout_ms: 30_000,
            max_concurrent_calls: 4,
            max_memory_tokens: e.max_memory_tokens,
            passages_per_call: e.passages_per_call,
            prompt_token_budget: e.prompt_token_budget,
            auth_token: None,
        }
    }
}

impl ServiceConfig {
    /// Reads a `.toml` or `.json` file, then applies environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text)?,
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(t) = lookup(AUTH_TOKEN_ENV) {
            self.auth_token = Some(t);
        }
        if let (Some(t), BackendDescriptor::Remote { token, .. }) = (lookup(BACKEND_TOKEN_ENV), &mut self.backend) {
            *token = Some(t);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(NetError::Config("timeout_ms must be > 0".into()));
        }
        if self.max_concurrent_calls == 0 {
            return Err(NetError::Config("max_concurrent_calls must be >= 1".into()));
        }
        self.engine_config().validate()?;
        build_embedder(&self.embedder_id)?;
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Generation settings handed to the memory pipeline.
    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            k: self.k,
            chunk_tokens: self.chunk_tokens,
            max_memory_tokens: self.max_memory_tokens,
            passages_per_call: self.passages_per_call,
            prompt_token_budget: self.prompt_token_budget,
            ..EngineConfig::default()
        }
    }

    pub fn build_backend(&self) -> Result<Arc<dyn LlmBackend>> {
        build_backend(&self.backend, self.timeout())
    }
}

pub fn build_backend(desc: &BackendDescriptor, timeout: Duration) -> Result<Arc<dyn LlmBackend>> {
    Ok(match desc {
        BackendDescriptor::MockCloud => Arc::new(MockCloudBackend::new()),
        BackendDescriptor::Echo => Arc::new(EchoBackend::new()),
        BackendDescriptor::Table { path } => Arc::new(TableBackend::load(path)?),
        BackendDescriptor::Remote { endpoint, token } => {
            Arc::new(RemoteBackend::new(endpoint.clone(), token.clone(), timeout))
        }
    })
}

/// Embedders are named `hashed-bow-v1-<dimension>`.
pub fn build_embedder(id: &str) -> Result<Box<dyn Embedder>> {
    let dim = id
        .strip_prefix(HASHED_BOW_PREFIX)
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| NetError::Config(format!("unknown embedder {id:?}")))?;
    Ok(Box::new(HashedBowEmbedder::new(dim)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_env_overrides() {
        let mut cfg: ServiceConfig = toml::from_str(
            r#"
            listen_address = "0.0.0.0:9000"
            k = 5
            [backend]
            kind = "remote"
            endpoint = "http://llm.local/v1/complete"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.timeout_ms, 30_000);
        cfg.apply_env(|k| (k == BACKEND_TOKEN_ENV).then(|| "secret".to_owned()));
        assert_eq!(
            cfg.backend,
            BackendDescriptor::Remote { endpoint: "http://llm.local/v1/complete".into(), token: Some("secret".into()) }
        );
        assert_eq!(cfg.auth_token, None);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn json_config_file() {
        let dir = std::env::temp_dir().join(format!("hybridrag-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("svc.json");
        std::fs::write(&path, r#"{"k": 2, "backend": {"kind": "echo"}}"#).unwrap();
        let cfg = ServiceConfig::load(&path).unwrap();
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.backend, BackendDescriptor::Echo);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn validation() {
        let bad = ServiceConfig { k: 0, ..ServiceConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ServiceConfig { timeout_ms: 0, ..ServiceConfig::default() };
        assert!(bad.validate().is_err());
        assert!(build_embedder("hashed-bow-v1-64").is_ok());
        assert!(build_embedder("dpr").is_err());
        assert_eq!(build_embedder(&ServiceConfig::default().embedder_id).unwrap().dimension(), 256);
    }
}
