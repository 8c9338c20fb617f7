//! Fixture-backed replay and recording.
//!
//! Fixtures live at `<dir>/<model_id>/<key>.txt` where `key` is
//! [`fixture_key`] of the model id and the prompt's user text. The file body
//! is the raw model response, served verbatim.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::{AttemptError, ModelBackend, PromptRequest, ProviderConfig};

/// First 16 bytes of SHA-256 over `model_id`, a unit separator, and
/// `user_text`, hex encoded.
pub fn fixture_key(model_id: &str, user_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(user_text.as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

pub fn fixture_path(dir: &Path, model_id: &str, user_text: &str) -> PathBuf {
    dir.join(model_id)
        .join(format!("{}.txt", fixture_key(model_id, user_text)))
}

#[derive(Debug, Clone)]
pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

#[async_trait]
impl ModelBackend for ReplayBackend {
    async fn complete(
        &self,
        config: &ProviderConfig,
        request: &PromptRequest,
    ) -> Result<String, AttemptError> {
        let path = fixture_path(&self.dir, &config.model_id, &request.user_text);
        tokio::fs::read_to_string(&path)
            .await
            .map_err(|e| AttemptError::permanent(format!("replay fixture {}: {e}", path.display())))
    }
}

/// Wraps a live backend and writes every successful response as a replay
/// fixture.
pub struct RecordingBackend {
    inner: Arc<dyn ModelBackend>,
    dir: PathBuf,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ModelBackend>, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }
}

#[async_trait]
impl ModelBackend for RecordingBackend {
    async fn complete(
        &self,
        config: &ProviderConfig,
        request: &PromptRequest,
    ) -> Result<String, AttemptError> {
        let text = self.inner.complete(config, request).await?;
        let path = fixture_path(&self.dir, &config.model_id, &request.user_text);
        if let Some(parent) = path.parent() {
            tokio::fs::create_dir_all(parent)
                .await
                .map_err(|e| AttemptError::permanent(format!("recording: {e}")))?;
        }
        tokio::fs::write(&path, &text)
            .await
            .map_err(|e| AttemptError::permanent(format!("recording {}: {e}", path.display())))?;
        Ok(text)
    }
}
