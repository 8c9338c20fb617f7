//! Uniform access to model backends.
//!
//! A [`ModelBackend`] performs a single attempt. The [`Gateway`] wraps every
//! attempt in the provider's timeout and retries transport and rate-limit
//! errors with exponential backoff. Failures are returned as values; nothing
//! here panics or propagates past `invoke`.

mod http;
mod parse;
mod replay;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FailureKind, SpecSchema};

pub use http::OpenAiCompatibleBackend;
pub use parse::{extract_json_object, parse_structured_output};
pub use replay::{fixture_key, fixture_path, RecordingBackend, ReplayBackend};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_MAX_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HttpOpenaiCompatible,
    ReplayFixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Extraction,
    Research,
    Synthesis,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

fn default_timeout() -> Duration {
    DEFAULT_TIMEOUT
}

fn default_max_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

/// One roster entry. `timeout` is in seconds in the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub model_id: String,
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credentials_env: Option<String>,
    #[serde(default = "default_timeout", with = "duration_secs")]
    pub timeout: Duration,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub role_tags: BTreeSet<RoleTag>,
    /// Replay providers only: root of `<model_id>/<hash>.txt` fixtures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures_dir: Option<PathBuf>,
}

impl ProviderConfig {
    pub fn replay(model_id: impl Into<String>, fixtures_dir: impl Into<PathBuf>) -> Self {
        Self {
            model_id: model_id.into(),
            kind: ProviderKind::ReplayFixture,
            endpoint: None,
            credentials_env: None,
            timeout: DEFAULT_TIMEOUT,
            max_retries: DEFAULT_MAX_RETRIES,
            role_tags: BTreeSet::from([RoleTag::Extraction]),
            fixtures_dir: Some(fixtures_dir.into()),
        }
    }

    pub fn http(model_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            kind: ProviderKind::HttpOpenaiCompatible,
            endpoint: Some(endpoint.into()),
            credentials_env: None,
            timeout: DEFAULT_TIMEOUT,
            max_retries: DEFAULT_MAX_RETRIES,
            role_tags: BTreeSet::from([RoleTag::Extraction]),
            fixtures_dir: None,
        }
    }

    pub fn with_roles(mut self, roles: impl IntoIterator<Item = RoleTag>) -> Self {
        self.role_tags = roles.into_iter().collect();
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_max_retries(mut self, max_retries: u32) -> Self {
        self.max_retries = max_retries;
        self
    }

    pub fn with_credentials_env(mut self, var: impl Into<String>) -> Self {
        self.credentials_env = Some(var.into());
        self
    }

    pub fn has_role(&self, role: RoleTag) -> bool {
        self.role_tags.contains(&role)
    }

    /// Resolve a relative `fixtures_dir` against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(dir) = &self.fixtures_dir {
            if dir.is_relative() {
                self.fixtures_dir = Some(base.join(dir));
            }
        }
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        let bad = |reason: &str| GatewayError::InvalidProvider {
            model_id: self.model_id.clone(),
            reason: reason.to_string(),
        };
        if self.model_id.trim().is_empty() {
            return Err(bad("model_id must not be empty"));
        }
        if self.timeout.is_zero() {
            return Err(bad("timeout must be > 0"));
        }
        match self.kind {
            ProviderKind::HttpOpenaiCompatible => {
                let endpoint = self.endpoint.as_deref().ok_or_else(|| bad("endpoint required"))?;
                reqwest::Url::parse(endpoint).map_err(|e| bad(&format!("endpoint: {e}")))?;
            }
            ProviderKind::ReplayFixture => {
                if self.fixtures_dir.is_none() {
                    return Err(bad("fixtures_dir required for replay providers"));
                }
            }
        }
        if let Some(var) = &self.credentials_env {
            let valid = !var.is_empty()
                && var
                    .chars()
                    .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
                && !var.starts_with(|c: char| c.is_ascii_digit());
            if !valid {
                return Err(bad(
                    "credentials_env must name an environment variable, not hold a key",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub system_text: String,
    pub user_text: String,
    pub response_schema: SpecSchema,
    #[serde(default)]
    pub temperature: f64,
}

impl PromptRequest {
    pub fn new(
        system_text: impl Into<String>,
        user_text: impl Into<String>,
        response_schema: SpecSchema,
    ) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            response_schema,
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderResponse {
    pub model_id: String,
    pub raw_text: String,
    pub latency: Duration,
    pub attempt_count: u32,
}

impl ProviderResponse {
    pub fn new(model_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            raw_text: raw_text.into(),
            latency: Duration::ZERO,
            attempt_count: 1,
        }
    }
}

/// Error from one backend attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptError {
    pub kind: FailureKind,
    pub message: String,
    pub retriable: bool,
}

impl AttemptError {
    pub fn transport(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Transport,
            message: message.into(),
            retriable: true,
        }
    }

    /// Transport-level problem that retrying will not fix (bad request,
    /// malformed body, missing fixture).
    pub fn permanent(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Transport,
            message: message.into(),
            retriable: false,
        }
    }

    pub fn rate_limited(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::RateLimited,
            message: message.into(),
            retriable: true,
        }
    }

    pub fn auth(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Auth,
            message: message.into(),
            retriable: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{model_id}: {kind} after {attempts} attempt(s): {last_error}")]
pub struct ProviderFailure {
    pub model_id: String,
    pub kind: FailureKind,
    pub last_error: String,
    pub attempts: u32,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider {model_id}: {reason}")]
    InvalidProvider { model_id: String, reason: String },
}

/// A model backend performing one attempt per call.
#[async_trait]
pub trait ModelBackend: Send + Sync {
    async fn complete(
        &self,
        config: &ProviderConfig,
        request: &PromptRequest,
    ) -> Result<String, AttemptError>;
}

/// Exponential backoff between retriable attempts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base: Duration::from_millis(500),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base * self.factor.saturating_pow(retry.saturating_sub(1))
    }

    /// Total sleep across `max_retries` retries.
    pub fn total_backoff(&self, max_retries: u32) -> Duration {
        (1..=max_retries).map(|r| self.delay(r)).sum()
    }
}

/// Build the default backend for a provider kind.
pub fn backend_for(config: &ProviderConfig) -> Result<Arc<dyn ModelBackend>, GatewayError> {
    config.check()?;
    Ok(match config.kind {
        ProviderKind::HttpOpenaiCompatible => Arc::new(OpenAiCompatibleBackend::new()),
        ProviderKind::ReplayFixture => Arc::new(ReplayBackend::new(
            config.fixtures_dir.clone().expect("checked above"),
        )),
    })
}

/// Routes requests to per-model backends with retry and timeout.
#[derive(Clone, Default)]
pub struct Gateway {
    backends: BTreeMap<String, Arc<dyn ModelBackend>>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("models", &self.backends.keys().collect::<Vec<_>>())
            .field("retry", &self.retry)
            .finish()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_roster(roster: &[ProviderConfig]) -> Result<Self, GatewayError> {
        let mut gateway = Self::new();
        for config in roster {
            gateway.register(&config.model_id, backend_for(config)?);
        }
        Ok(gateway)
    }

    pub fn register(&mut self, model_id: &str, backend: Arc<dyn ModelBackend>) -> &mut Self {
        self.backends.insert(model_id.to_string(), backend);
        self
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    pub async fn invoke(
        &self,
        config: &ProviderConfig,
        request: &PromptRequest,
    ) -> Result<ProviderResponse, ProviderFailure> {
        match self.backends.get(&config.model_id) {
            Some(backend) => invoke_with(backend.as_ref(), config, request, self.retry).await,
            None => Err(ProviderFailure {
                model_id: config.model_id.clone(),
                kind: FailureKind::Transport,
                last_error: "no backend registered".into(),
                attempts: 0,
            }),
        }
    }
}

/// One-shot invoke using the default backend for `config.kind`.
pub async fn invoke(
    config: &ProviderConfig,
    request: &PromptRequest,
) -> Result<ProviderResponse, ProviderFailure> {
    match backend_for(config) {
        Ok(backend) => invoke_with(backend.as_ref(), config, request, RetryPolicy::default()).await,
        Err(e) => Err(ProviderFailure {
            model_id: config.model_id.clone(),
            kind: FailureKind::Transport,
            last_error: e.to_string(),
            attempts: 0,
        }),
    }
}

/// Run attempts against `backend` until success, a non-retriable error, a
/// timeout, or `max_retries` retries are spent.
pub async fn invoke_with(
    backend: &dyn ModelBackend,
    config: &ProviderConfig,
    request: &PromptRequest,
    retry: RetryPolicy,
) -> Result<ProviderResponse, ProviderFailure> {
    let started = Instant::now();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let outcome = tokio::time::timeout(config.timeout, backend.complete(config, request)).await;
        let error = match outcome {
            Ok(Ok(raw_text)) => {
                return Ok(ProviderResponse {
                    model_id: config.model_id.clone(),
                    raw_text,
                    latency: started.elapsed(),
                    attempt_count: attempts,
                })
            }
            Ok(Err(error)) => error,
            Err(_) => {
                return Err(ProviderFailure {
                    model_id: config.model_id.clone(),
                    kind: FailureKind::Timeout,
                    last_error: format!("no response within {:?}", config.timeout),
                    attempts,
                })
            }
        };
        if !error.retriable {
            return Err(ProviderFailure {
                model_id: config.model_id.clone(),
                kind: error.kind,
                last_error: error.message,
                attempts,
            });
        }
        if attempts > config.max_retries {
            return Err(ProviderFailure {
                model_id: config.model_id.clone(),
                kind: FailureKind::ExhaustedRetries,
                last_error: format!("{}: {}", error.kind, error.message),
                attempts,
            });
        }
        tracing::debug!(
            model = %config.model_id,
            attempt = attempts,
            error = %error.message,
            "retrying"
        );
        tokio::time::sleep(retry.delay(attempts)).await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Scripted {
        calls: AtomicU32,
        script: Vec<Result<&'static str, AttemptError>>,
    }

    #[async_trait]
    impl ModelBackend for Scripted {
        async fn complete(&self, _: &ProviderConfig, _: &PromptRequest) -> Result<String, AttemptError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            let step = &self.script[n.min(self.script.len() - 1)];
            step.clone().map(str::to_string)
        }
    }

    fn request() -> PromptRequest {
        PromptRequest::new("sys", "user", SpecSchema::default_parts())
    }

    fn fast() -> RetryPolicy {
        RetryPolicy {
            base: Duration::from_millis(1),
            factor: 2,
        }
    }

    #[test]
    fn backoff_schedule() {
        let policy = RetryPolicy::default();
        assert_eq!(policy.delay(1), Duration::from_millis(500));
        assert_eq!(policy.delay(2), Duration::from_millis(1000));
        assert_eq!(policy.delay(3), Duration::from_millis(2000));
        assert_eq!(policy.total_backoff(2), Duration::from_millis(1500));
    }

    #[tokio::test]
    async fn rate_limit_then_success() {
        let backend = Scripted {
            calls: AtomicU32::new(0),
            script: vec![
                Err(AttemptError::rate_limited("429")),
                Err(AttemptError::rate_limited("429")),
                Ok("{}"),
            ],
        };
        let config = ProviderConfig::replay("m", "/nonexistent");
        let response = invoke_with(&backend, &config, &request(), fast()).await.unwrap();
        assert_eq!(response.attempt_count, 3);
        assert_eq!(response.raw_text, "{}");
    }

    #[tokio::test]
    async fn retries_are_bounded() {
        for max_retries in 0..4 {
            let backend = Scripted {
                calls: AtomicU32::new(0),
                script: vec![Err(AttemptError::transport("reset"))],
            };
            let config = ProviderConfig::replay("m", "/x").with_max_retries(max_retries);
            let failure = invoke_with(&backend, &config, &request(), fast()).await.unwrap_err();
            assert_eq!(failure.kind, FailureKind::ExhaustedRetries);
            assert_eq!(failure.attempts, max_retries + 1);
            assert_eq!(backend.calls.load(Ordering::SeqCst), max_retries + 1);
            assert!(failure.last_error.contains("reset"));
        }
    }

    #[tokio::test]
    async fn auth_is_not_retried() {
        let backend = Scripted {
            calls: AtomicU32::new(0),
            script: vec![Err(AttemptError::auth("401"))],
        };
        let config = ProviderConfig::replay("m", "/x");
        let failure = invoke_with(&backend, &config, &request(), fast()).await.unwrap_err();
        assert_eq!(failure.kind, FailureKind::Auth);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn provider_config_json() {
        let config: ProviderConfig = serde_json::from_str(
            r#"{"model_id":"gpt","kind":"http_openai_compatible","endpoint":"http://localhost:1/v1/chat/completions",
                "credentials_env":"OPENAI_API_KEY","timeout":2.5,"role_tags":["extraction","research"]}"#,
        )
        .unwrap();
        assert_eq!(config.timeout, Duration::from_millis(2500));
        assert_eq!(config.max_retries, 2);
        assert!(config.has_role(RoleTag::Research));
        config.check().unwrap();

        let literal_key = ProviderConfig::http("gpt", "http://x/").with_credentials_env("sk-abc123");
        assert!(literal_key.check().is_err());
        assert!(ProviderConfig::http("gpt", "http://x/")
            .with_timeout(Duration::ZERO)
            .check()
            .is_err());
        assert!(serde_json::from_str::<ProviderConfig>(
            r#"{"model_id":"a","kind":"replay_fixture","api_key":"x"}"#
        )
        .is_err());
    }
}
