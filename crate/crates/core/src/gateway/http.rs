//! OpenAI-compatible chat-completions backend.

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{AttemptError, ModelBackend, PromptRequest, ProviderConfig};

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// POSTs `{model, messages, temperature}` to the configured endpoint and
/// returns `choices[0].message.content`.
#[derive(Debug, Clone, Default)]
pub struct OpenAiCompatibleBackend {
    client: reqwest::Client,
}

impl OpenAiCompatibleBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

pub(crate) fn read_api_key(config: &ProviderConfig) -> Result<Option<String>, AttemptError> {
    match &config.credentials_env {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(Some)
            .map_err(|_| AttemptError::auth(format!("environment variable {var} is not set"))),
    }
}

pub(crate) fn classify_status(status: StatusCode, body: &str) -> AttemptError {
    let snippet: String = body.chars().take(200).collect();
    let message = format!("HTTP {}: {snippet}", status.as_u16());
    match status {
        StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => AttemptError::auth(message),
        StatusCode::TOO_MANY_REQUESTS => AttemptError::rate_limited(message),
        s if s.is_server_error() => AttemptError::transport(message),
        _ => AttemptError::permanent(message),
    }
}

#[async_trait]
impl ModelBackend for OpenAiCompatibleBackend {
    async fn complete(
        &self,
        config: &ProviderConfig,
        request: &PromptRequest,
    ) -> Result<String, AttemptError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| AttemptError::permanent("no endpoint configured"))?;
        let body = ChatRequest {
            model: &config.model_id,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &request.system_text,
                },
                ChatMessage {
                    role: "user",
                    content: &request.user_text,
                },
            ],
            temperature: request.temperature,
        };
        let mut builder = self.client.post(endpoint).json(&body);
        if let Some(key) = read_api_key(config)? {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| AttemptError::transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| AttemptError::transport(e.to_string()))?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| AttemptError::permanent(format!("malformed completion body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| AttemptError::permanent("completion has no choices[0].message.content"))
    }
}
