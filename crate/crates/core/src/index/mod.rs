//! Knowledge-base retrieval: ingestion, embedding, exact top-k search.

mod embed;
mod flat;
mod ingest;
pub mod persist;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use embed::{
    Embedder, EmbedderSpec, EmbeddingVector, HashedTrigramEmbedder, HttpEmbedder,
    DEFAULT_DIMENSION,
};
pub use flat::{FlatIndex, IndexBuilder, IndexRow};
pub use ingest::{flatten_record, ingest_records, FormatError, IngestReport, RecordFormat};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate record id {0:?}")]
    DuplicateRecord(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSource {
    pub file: String,
    pub locator: String,
}

/// One knowledge-base entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRecord {
    pub record_id: String,
    pub flat_text: String,
    pub source: RecordSource,
    pub raw_fields: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub record_id: String,
    pub similarity: f64,
    pub snippet: String,
}

/// Result of one retrieval: hits sorted by similarity descending, ties by
/// record id ascending, all at or above `threshold_applied`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub query_text: String,
    pub k_requested: usize,
    pub threshold_applied: f64,
    pub hits: Vec<Hit>,
}

impl RetrievedContext {
    pub fn empty(query_text: impl Into<String>, k: usize, threshold: f64) -> Self {
        Self {
            query_text: query_text.into(),
            k_requested: k,
            threshold_applied: threshold,
            hits: Vec::new(),
        }
    }
}

/// A frozen index paired with the embedder that built it. Cheap to clone
/// and safe to share across tasks.
#[derive(Clone)]
pub struct KnowledgeIndex {
    index: Arc<FlatIndex>,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for KnowledgeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeIndex")
            .field("rows", &self.index.len())
            .field("embedder", self.index.embedder())
            .finish()
    }
}

impl KnowledgeIndex {
    pub fn new(index: FlatIndex, embedder: Arc<dyn Embedder>) -> Result<Self, IndexError> {
        if embedder.dimension() != index.dimension() {
            return Err(IndexError::DimensionMismatch {
                expected: index.dimension(),
                found: embedder.dimension(),
            });
        }
        Ok(Self {
            index: Arc::new(index),
            embedder,
        })
    }

    /// An index with no rows; every search returns no hits.
    pub fn empty(embedder: Arc<dyn Embedder>) -> Self {
        let index = IndexBuilder::new(embedder.spec()).freeze();
        Self {
            index: Arc::new(index),
            embedder,
        }
    }

    pub async fn build(
        records: &[PartRecord],
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, IndexError> {
        let mut builder = IndexBuilder::new(embedder.spec());
        for record in records {
            let vector = embedder.embed(&record.flat_text).await?;
            builder.add(&record.record_id, &record.flat_text, &vector)?;
        }
        Self::new(builder.freeze(), embedder)
    }

    /// Load from disk, rebuilding the embedder from the manifest.
    pub fn open(dir: &Path) -> Result<Self, IndexError> {
        let index = persist::load(dir)?;
        let embedder = index.embedder().build()?;
        Self::new(index, embedder)
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        persist::save(&self.index, dir)
    }

    pub fn flat(&self) -> &FlatIndex {
        &self.index
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Exact top-k cosine search. An empty index yields no hits (with a
    /// warning) rather than an error.
    pub async fn search_top_k(
        &self,
        query_text: &str,
        k: usize,
        threshold: f64,
    ) -> Result<RetrievedContext, IndexError> {
        let mut context = RetrievedContext::empty(query_text, k, threshold);
        if self.index.is_empty() {
            tracing::warn!("knowledge index is empty; retrieval returns no references");
            return Ok(context);
        }
        if k == 0 {
            return Ok(context);
        }
        let query = self.embedder.embed(query_text).await?;
        context.hits = self.index.search_vector(&query, k, threshold)?;
        Ok(context)
    }
}
