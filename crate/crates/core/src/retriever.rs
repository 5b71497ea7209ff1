//! Corpus chunking, embedding, and exact top-k cosine retrieval.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::hash::Hasher;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{detokenize, split_tokens};

pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Maps text to a fixed-width unit vector.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Must be deterministic and return a vector of L2 norm 1.
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// Hashed bag-of-tokens embedder.
///
/// Each lowercased alphanumeric token lands in one of `dimension` buckets with
/// a ±1 sign drawn from an independent hash; the sum is L2-normalized. Text
/// with no alphanumeric tokens maps to the first basis vector.
#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dimension: usize,
    id: String,
}

impl HashedBowEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 1, "embedding dimension must be positive");
        Self {
            dimension,
            id: format!("hashed-bow-v1-{dimension}"),
        }
    }

    fn hash(salt: u8, token: &str) -> u64 {
        let mut h = FnvHasher::default();
        h.write_u8(salt);
        h.write(token.as_bytes());
        h.finish()
    }

    /// Unnormalized bucket counts; exposed for oracle tests.
    pub fn raw_counts(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0f64; self.dimension];
        for tok in split_tokens(text) {
            if !tok.chars().any(char::is_alphanumeric) {
                continue;
            }
            let tok = tok.to_lowercase();
            let bucket = (Self::hash(0x5b, &tok) % self.dimension as u64) as usize;
            let sign = if Self::hash(0xa7, &tok) & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        v
    }
}

impl Default for HashedBowEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

impl Embedder for HashedBowEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        normalize(self.raw_counts(text))
    }
}

/// L2-normalizes `v`; the zero vector becomes the first basis vector.
pub fn normalize(v: Vec<f64>) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut out = vec![0.0f32; v.len()];
        if let Some(first) = out.first_mut() {
            *first = 1.0;
        }
        return out;
    }
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

/// Cosine similarity of two unit vectors, accumulated in f64.
pub fn similarity(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// A corpus document as read from JSON Lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

/// Reads `{"doc_id": ..., "text": ...}` objects, one per line. Blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("corpus line {}: {e}", n + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn read_corpus_file(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let f = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(f))
}

/// A chunk before embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkText {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub token_count: usize,
    pub embedding: Vec<f32>,
}

/// Greedy left-to-right packing of the document's tokens into windows of at
/// most `chunk_tokens`. Sentence boundaries are ignored.
pub fn chunk_document(doc_id: &str, text: &str, chunk_tokens: usize) -> Vec<ChunkText> {
    assert!(chunk_tokens >= 1, "chunk_tokens must be >= 1");
    split_tokens(text)
        .chunks(chunk_tokens)
        .enumerate()
        .map(|(chunk_index, window)| ChunkText {
            doc_id: doc_id.to_owned(),
            chunk_index,
            text: detokenize(window),
            token_count: window.len(),
        })
        .collect()
}

/// A retrieval result.
#[derive(Debug, Clone, Copy)]
pub struct Hit<'a> {
    pub chunk: &'a Chunk,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    embedder_id: String,
    dimension: usize,
    chunks: Vec<Chunk>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format_version: u32,
    #[serde(flatten)]
    index: CorpusIndex,
}

impl CorpusIndex {
    pub fn empty(embedder: &dyn Embedder) -> Self {
        Self {
            embedder_id: embedder.id().to_owned(),
            dimension: embedder.dimension(),
            chunks: Vec::new(),
        }
    }

    /// Chunks and embeds `docs`. Doc ids must be unique.
    pub fn ingest(docs: &[Document], embedder: &dyn Embedder, chunk_tokens: usize) -> Result<Self> {
        if chunk_tokens == 0 {
            return Err(Error::Config("chunk_tokens must be >= 1".into()));
        }
        let mut seen = HashSet::new();
        let mut index = Self::empty(embedder);
        for doc in docs {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::DuplicateDocId(doc.doc_id.clone()));
            }
            for piece in chunk_document(&doc.doc_id, &doc.text, chunk_tokens) {
                let embedding = embedder.embed(&piece.text);
                debug_assert_eq!(embedding.len(), index.dimension);
                index.chunks.push(Chunk {
                    doc_id: piece.doc_id,
                    chunk_index: piece.chunk_index,
                    text: piece.text,
                    token_count: piece.token_count,
                    embedding,
                });
            }
        }
        Ok(index)
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn check_embedder(&self, embedder: &dyn Embedder) -> Result<()> {
        if embedder.id() != self.embedder_id {
            return Err(Error::EmbedderMismatch {
                index: self.embedder_id.clone(),
                caller: embedder.id().to_owned(),
            });
        }
        Ok(())
    }

    /// Top `k` chunks by cosine similarity to `query`, best first. Ties are
    /// broken by `(doc_id, chunk_index)` ascending.
    pub fn retrieve(&self, embedder: &dyn Embedder, query: &str, k: usize) -> Result<Vec<Hit<'_>>> {
        self.check_embedder(embedder)?;
        if self.chunks.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if split_tokens(query).is_empty() {
            return Err(Error::EmptyQuery);
        }
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        let q = embedder.embed(query);
        let mut heap: BinaryHeap<Reverse<Ranked<'_>>> = BinaryHeap::with_capacity(k + 1);
        for chunk in &self.chunks {
            let cand = Ranked {
                score: similarity(&q, &chunk.embedding),
                chunk,
            };
            if heap.len() < k {
                heap.push(Reverse(cand));
            } else if let Some(Reverse(worst)) = heap.peek() {
                if cand > *worst {
                    heap.pop();
                    heap.push(Reverse(cand));
                }
            }
        }
        let mut ranked: Vec<Ranked<'_>> = heap.into_iter().map(|Reverse(r)| r).collect();
        ranked.sort_by(|a, b| b.cmp(a));
        Ok(ranked
            .into_iter()
            .map(|r| Hit {
                chunk: r.chunk,
                score: r.score,
            })
            .collect())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let file = IndexFile {
            format_version: INDEX_FORMAT_VERSION,
            index: self.clone(),
        };
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_json(&mut buf)?;
        Ok(buf)
    }

    /// Loads a persisted index, refusing one built by a different embedder.
    pub fn read_json<R: Read>(r: R, embedder: &dyn Embedder) -> Result<Self> {
        let file: IndexFile = serde_json::from_reader(r)?;
        if file.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::IndexVersion(file.format_version));
        }
        let index = file.index;
        index.check_embedder(embedder)?;
        if index.chunks.iter().any(|c| c.embedding.len() != index.dimension) {
            return Err(Error::InvalidInput("chunk embedding width differs from index dimension".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_json(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, embedder: &dyn Embedder) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_json(std::io::BufReader::new(f), embedder)
    }
}

/// A corpus index paired with the embedder that built it.
pub struct Retriever {
    index: CorpusIndex,
    embedder: Box<dyn Embedder>,
}

impl Retriever {
    pub fn new(index: CorpusIndex, embedder: Box<dyn Embedder>) -> Result<Self> {
        index.check_embedder(embedder.as_ref())?;
        Ok(Self { index, embedder })
    }

    pub fn from_documents(docs: &[Document], embedder: Box<dyn Embedder>, chunk_tokens: usize) -> Result<Self> {
        let index = CorpusIndex::ingest(docs, embedder.as_ref(), chunk_tokens)?;
        Ok(Self { index, embedder })
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Hit<'_>>> {
        self.index.retrieve(self.embedder.as_ref(), query, k)
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }
}

impl std::fmt::Debug for Retriever {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Retriever")
            .field("embedder", &self.embedder.id())
            .field("chunks", &self.index.len())
            .finish()
    }
}

// Greater means ranked earlier.
#[derive(Debug, Clone, Copy)]
struct Ranked<'a> {
    score: f64,
    chunk: &'a Chunk,
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| {
            (other.chunk.doc_id.as_str(), other.chunk.chunk_index)
                .cmp(&(self.chunk.doc_id.as_str(), self.chunk.chunk_index))
        })
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}
