//! Text embedders.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::IndexError;
use crate::gateway::RetryPolicy;
use crate::model::canonicalize_value;

pub const DEFAULT_DIMENSION: usize = 384;

/// Unit-norm embedding. Construction normalizes.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    components: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalize `raw` to unit length. `None` for empty, zero, or
    /// non-finite input.
    pub fn normalized(raw: Vec<f32>) -> Option<Self> {
        if raw.is_empty() || raw.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let norm = raw.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        Some(Self {
            components: raw.into_iter().map(|x| (f64::from(x) / norm) as f32).collect(),
        })
    }

    /// The basis vector e_index.
    pub fn basis(dimension: usize, index: usize) -> Self {
        let mut components = vec![0.0; dimension];
        components[index] = 1.0;
        Self { components }
    }

    pub fn components(&self) -> &[f32] {
        &self.components
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn norm(&self) -> f64 {
        self.components
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }
}

/// Serializable description of an embedder, stored in the index manifest so
/// a reloaded index embeds queries the same way it embedded records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderSpec {
    HashedTrigram {
        dimension: usize,
    },
    Http {
        endpoint: String,
        model: String,
        dimension: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        credentials_env: Option<String>,
    },
}

impl EmbedderSpec {
    pub fn dimension(&self) -> usize {
        match self {
            EmbedderSpec::HashedTrigram { dimension } | EmbedderSpec::Http { dimension, .. } => {
                *dimension
            }
        }
    }

    pub fn build(&self) -> Result<std::sync::Arc<dyn Embedder>, IndexError> {
        Ok(match self {
            EmbedderSpec::HashedTrigram { dimension } => {
                std::sync::Arc::new(HashedTrigramEmbedder::new(*dimension)?)
            }
            EmbedderSpec::Http {
                endpoint,
                model,
                dimension,
                credentials_env,
            } => std::sync::Arc::new(HttpEmbedder::new(
                endpoint.clone(),
                model.clone(),
                *dimension,
                credentials_env.clone(),
            )?),
        })
    }
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn spec(&self) -> EmbedderSpec;
    async fn embed(&self, text: &str) -> Result<EmbeddingVector, IndexError>;
}

/// Deterministic offline embedder: character-trigram counts hashed into
/// `dimension` buckets, then L2-normalized.
///
/// Text is canonicalized first (case, whitespace, unit tokens) and padded
/// with boundary markers so short strings still produce trigrams. Text that
/// canonicalizes to empty maps to e₁.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedTrigramEmbedder {
    dimension: usize,
}

impl Default for HashedTrigramEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

impl HashedTrigramEmbedder {
    pub fn new(dimension: usize) -> Result<Self, IndexError> {
        if dimension == 0 {
            return Err(IndexError::Format("embedding dimension must be positive".into()));
        }
        Ok(Self { dimension })
    }

    pub fn embed_sync(&self, text: &str) -> EmbeddingVector {
        let canonical = canonicalize_value(text);
        if canonical.is_empty() {
            return EmbeddingVector::basis(self.dimension, 0);
        }
        let chars: Vec<char> = std::iter::once('\u{2}')
            .chain(canonical.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut counts = vec![0f32; self.dimension];
        let mut buf = [0u8; 12];
        for window in chars.windows(3) {
            let mut len = 0;
            for c in window {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let bucket = (fnv1a(&buf[..len]) % self.dimension as u64) as usize;
            counts[bucket] += 1.0;
        }
        EmbeddingVector::normalized(counts).expect("at least one trigram was counted")
    }
}

#[async_trait]
impl Embedder for HashedTrigramEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn spec(&self) -> EmbedderSpec {
        EmbedderSpec::HashedTrigram {
            dimension: self.dimension,
        }
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, IndexError> {
        Ok(self.embed_sync(text))
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

/// Remote embedder speaking the OpenAI-compatible `/embeddings` shape.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    dimension: usize,
    credentials_env: Option<String>,
    timeout: Duration,
    max_retries: u32,
    retry: RetryPolicy,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: String,
        model: String,
        dimension: usize,
        credentials_env: Option<String>,
    ) -> Result<Self, IndexError> {
        reqwest::Url::parse(&endpoint)
            .map_err(|e| IndexError::Format(format!("embedder endpoint: {e}")))?;
        if dimension == 0 {
            return Err(IndexError::Format("embedding dimension must be positive".into()));
        }
        Ok(Self {
            client: reqwest::Client::new(),
            endpoint,
            model,
            dimension,
            credentials_env,
            timeout: Duration::from_secs(30),
            max_retries: 2,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, max_retries: u32, retry: RetryPolicy, timeout: Duration) -> Self {
        self.max_retries = max_retries;
        self.retry = retry;
        self.timeout = timeout;
        self
    }

    async fn attempt(&self, text: &str) -> Result<Vec<f32>, (bool, String)> {
        let mut request = self
            .client
            .post(&self.endpoint)
            .timeout(self.timeout)
            .json(&EmbeddingRequest {
                model: &self.model,
                input: text,
            });
        if let Some(var) = &self.credentials_env {
            let key = std::env::var(var).map_err(|_| (false, format!("{var} is not set")))?;
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| (true, e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let retriable = status.is_server_error() || status.as_u16() == 429;
            return Err((retriable, format!("HTTP {}", status.as_u16())));
        }
        let body: EmbeddingResponse = response.json().await.map_err(|e| (false, e.to_string()))?;
        body.data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or((false, "empty embedding response".to_string()))
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn spec(&self) -> EmbedderSpec {
        EmbedderSpec::Http {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            dimension: self.dimension,
            credentials_env: self.credentials_env.clone(),
        }
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, IndexError> {
        let mut attempts = 0;
        let raw = loop {
            attempts += 1;
            match self.attempt(text).await {
                Ok(raw) => break raw,
                Err((true, msg)) if attempts <= self.max_retries => {
                    tracing::debug!(attempt = attempts, error = %msg, "embedder retry");
                    tokio::time::sleep(self.retry.delay(attempts)).await;
                }
                Err((_, msg)) => return Err(IndexError::EmbedderUnavailable(msg)),
            }
        };
        if raw.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                found: raw.len(),
            });
        }
        EmbeddingVector::normalized(raw)
            .ok_or_else(|| IndexError::EmbedderUnavailable("degenerate embedding".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_first_basis_vector() {
        let embedder = HashedTrigramEmbedder::new(16).unwrap();
        assert_eq!(embedder.embed_sync(""), EmbeddingVector::basis(16, 0));
        assert_eq!(embedder.embed_sync("   "), EmbeddingVector::basis(16, 0));
    }

    #[test]
    fn deterministic_and_case_insensitive() {
        let embedder = HashedTrigramEmbedder::default();
        let a = embedder.embed_sync("Hex bolt M8 x 40");
        assert_eq!(a, embedder.embed_sync("Hex bolt M8 x 40"));
        assert_eq!(a, embedder.embed_sync("  hex BOLT m8   x 40"));
        assert_eq!(a.dimension(), DEFAULT_DIMENSION);
    }

    #[test]
    fn normalized_rejects_degenerate() {
        assert!(EmbeddingVector::normalized(vec![]).is_none());
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_none());
        assert!(EmbeddingVector::normalized(vec![f32::NAN]).is_none());
    }

    proptest! {
        #[test]
        fn unit_norm(text in "\\PC{1,80}", dim in 1usize..512) {
            let v = HashedTrigramEmbedder::new(dim).unwrap().embed_sync(&text);
            prop_assert!((v.norm() - 1.0).abs() <= 1e-6);
        }
    }
}
