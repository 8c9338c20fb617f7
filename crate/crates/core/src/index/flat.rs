//! Exact flat index: every query scans every row.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use super::embed::{EmbedderSpec, EmbeddingVector};
use super::{Hit, IndexError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub record_id: String,
    pub flat_text: String,
}

/// Accumulates rows; [`IndexBuilder::freeze`] produces the immutable index.
#[derive(Debug)]
pub struct IndexBuilder {
    embedder: EmbedderSpec,
    vectors: Vec<f32>,
    rows: Vec<IndexRow>,
    ids: HashSet<String>,
}

impl IndexBuilder {
    pub fn new(embedder: EmbedderSpec) -> Self {
        Self {
            embedder,
            vectors: Vec::new(),
            rows: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn add(
        &mut self,
        record_id: &str,
        flat_text: &str,
        vector: &EmbeddingVector,
    ) -> Result<(), IndexError> {
        let dimension = self.embedder.dimension();
        if vector.dimension() != dimension {
            return Err(IndexError::DimensionMismatch {
                expected: dimension,
                found: vector.dimension(),
            });
        }
        if !self.ids.insert(record_id.to_string()) {
            return Err(IndexError::DuplicateRecord(record_id.to_string()));
        }
        self.vectors.extend_from_slice(vector.components());
        self.rows.push(IndexRow {
            record_id: record_id.to_string(),
            flat_text: flat_text.to_string(),
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn freeze(self) -> FlatIndex {
        FlatIndex::from_parts(self.embedder, self.vectors, self.rows)
    }
}

/// Immutable row-major vector store with exact cosine search.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    embedder: EmbedderSpec,
    vectors: Vec<f32>,
    /// Euclidean norm of each row, so similarity is a true cosine even when
    /// stored vectors are only unit length to f32 precision.
    norms: Vec<f64>,
    rows: Vec<IndexRow>,
}

/// Ranked candidate. `Ord` puts the *worse* candidate first so a
/// `BinaryHeap` keeps the worst of the current top-k on top.
struct Candidate<'a> {
    similarity: f64,
    record_id: &'a str,
    row: usize,
}

impl Candidate<'_> {
    fn rank(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.record_id.cmp(other.record_id))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank(other)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine from a precomputed dot product and norms; 0 for a zero vector.
fn cosine(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        0.0
    } else {
        dot / (norm_a * norm_b)
    }
}

impl FlatIndex {
    pub(crate) fn from_parts(embedder: EmbedderSpec, vectors: Vec<f32>, rows: Vec<IndexRow>) -> Self {
        let dimension = embedder.dimension();
        let norms = if dimension == 0 {
            Vec::new()
        } else {
            vectors.chunks_exact(dimension).map(norm).collect()
        };
        Self {
            embedder,
            vectors,
            norms,
            rows,
        }
    }

    pub fn embedder(&self) -> &EmbedderSpec {
        &self.embedder
    }

    pub fn dimension(&self) -> usize {
        self.embedder.dimension()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[IndexRow] {
        &self.rows
    }

    pub fn raw_vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        let d = self.dimension();
        &self.vectors[row * d..(row + 1) * d]
    }

    /// The `k` rows with highest cosine similarity ≥ `threshold`, sorted by
    /// similarity descending then record id ascending.
    pub fn search_vector(
        &self,
        query: &EmbeddingVector,
        k: usize,
        threshold: f64,
    ) -> Result<Vec<Hit>, IndexError> {
        if query.dimension() != self.dimension() {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension(),
                found: query.dimension(),
            });
        }
        if k == 0 || self.rows.is_empty() {
            return Ok(Vec::new());
        }
        let q = query.components();
        let q_norm = norm(q);
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for (row, meta) in self.rows.iter().enumerate() {
            let similarity = cosine(dot(q, self.vector(row)), q_norm, self.norms[row]);
            if similarity < threshold {
                continue;
            }
            let candidate = Candidate {
                similarity,
                record_id: &meta.record_id,
                row,
            };
            if heap.len() < k {
                heap.push(candidate);
            } else if let Some(worst) = heap.peek() {
                if candidate < *worst {
                    heap.pop();
                    heap.push(candidate);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Hit {
                record_id: c.record_id.to_string(),
                similarity: c.similarity,
                snippet: self.rows[c.row].flat_text.clone(),
            })
            .collect())
    }
}
