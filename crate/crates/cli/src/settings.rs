//! Settings file shared by `sim`, `data` and `engine`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use hybridrag_core::backend::LlmBackend;
use hybridrag_core::harness::sim::LatencyModel;
use hybridrag_core::retriever::{read_corpus_file, Document, Embedder, HashedBowEmbedder, Retriever};
use hybridrag_core::types::EngineConfig;
use hybridrag_net::config::{build_backend, build_embedder};
use hybridrag_net::BackendDescriptor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub engine: EngineConfig,
    pub latency: LatencyModel,
    pub corpus_path: Option<PathBuf>,
    pub embedder_id: String,
    pub seed: u64,
    pub client: BackendDescriptor,
    pub cloud: BackendDescriptor,
    /// Timeout for remote backends.
    pub timeout_ms: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            latency: LatencyModel::default(),
            corpus_path: None,
            embedder_id: HashedBowEmbedder::default().id().to_owned(),
            seed: 0,
            client: BackendDescriptor::Echo,
            cloud: BackendDescriptor::MockCloud,
            timeout_ms: 30_000,
        }
    }
}

impl Settings {
    /// Reads a TOML or JSON file. Relative paths inside it resolve against
    /// the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut s: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        };
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(c) = &s.corpus_path {
            s.corpus_path = Some(base.join(c));
        }
        for desc in [&mut s.client, &mut s.cloud] {
            if let BackendDescriptor::Table { path } = desc {
                *path = base.join(&*path);
            }
        }
        s.engine.validate()?;
        s.latency.validate()?;
        Ok(s)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn client_backend(&self) -> Result<Arc<dyn LlmBackend>> {
        Ok(build_backend(&self.client, self.timeout())?)
    }

    pub fn cloud_backend(&self) -> Result<Arc<dyn LlmBackend>> {
        Ok(build_backend(&self.cloud, self.timeout())?)
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>> {
        Ok(build_embedder(&self.embedder_id)?)
    }

    pub fn documents(&self, corpus: Option<&Path>) -> Result<Vec<Document>> {
        let Some(path) = corpus.or(self.corpus_path.as_deref()) else {
            bail!("no corpus given; pass --corpus or set corpus_path");
        };
        read_corpus_file(path).with_context(|| format!("reading corpus {}", path.display()))
    }

    pub fn retriever(&self, docs: &[Document]) -> Result<Retriever> {
        Ok(Retriever::from_documents(docs, self.embedder()?, self.engine.chunk_tokens)?)
    }
}

/// Reads `{"prompt": ...}` lines; blank lines are skipped.
pub fn read_prompts(path: &Path) -> Result<Vec<String>> {
    #[derive(Deserialize)]
    struct Line {
        prompt: String,
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<Line>(l)
                .map(|p| p.prompt)
                .with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_settings_resolve_relative_paths() {
        let dir = std::env::temp_dir().join(format!("hybridrag-settings-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sim.toml");
        std::fs::write(
            &path,
            r#"
            corpus_path = "corpus.jsonl"
            seed = 9
            [engine]
            tau = 4
            [latency]
            client_infer = 20.0
            retrieval = 100.0
            generation = { min_ms = 500.0, max_ms = 900.0 }
            network_rtt = 100.0
            [cloud]
            kind = "table"
            path = "table.json"
            "#,
        )
        .unwrap();
        let s = Settings::load(Some(&path)).unwrap();
        assert_eq!(s.engine.tau, 4);
        assert_eq!(s.engine.k, EngineConfig::default().k);
        assert_eq!(s.seed, 9);
        assert_eq!(s.corpus_path, Some(dir.join("corpus.jsonl")));
        assert_eq!(s.cloud, BackendDescriptor::Table { path: dir.join("table.json") });
        assert_eq!(s.client, BackendDescriptor::Echo);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn defaults_without_file() {
        let s = Settings::load(None).unwrap();
        assert_eq!(s, Settings::default());
        assert!(s.documents(None).is_err());
    }
}
