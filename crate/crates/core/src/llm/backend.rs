use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::{LlmConfig, LlmError};

/// One chat completion: a system and a user message.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub system: String,
    pub user: String,
    pub options: serde_json::Map<String, Value>,
}

impl ChatRequest {
    /// OpenAI-style request body; pass-through options are merged last.
    pub fn to_body(&self) -> Value {
        let mut body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
        });
        let obj = body.as_object_mut().expect("body is an object");
        for (k, v) in &self.options {
            obj.insert(k.clone(), v.clone());
        }
        body
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("credential rejected: {0}")]
    Credential(String),
    #[error("transient failure{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Transient { status: Option<u16>, message: String },
    #[error("context limit exceeded: {0}")]
    ContextLimit(String),
    #[error("request failed{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Fatal { status: Option<u16>, message: String },
}

/// Anything that can complete a chat request.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

/// Blocking HTTP backend speaking the OpenAI chat-completions wire format.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    auth_header: String,
    auth_value: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Reads the API key from `cfg.api_key_env`.
    pub fn from_env(cfg: &LlmConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::Credential(format!("environment variable {} is not set", cfg.api_key_env)))?;
        Self::new(cfg, &key)
    }

    pub fn new(cfg: &LlmConfig, api_key: &str) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(HttpBackend {
            client,
            endpoint: cfg.endpoint.clone(),
            auth_header: cfg.auth_header.clone(),
            auth_value: cfg.auth_template.replace("{key}", api_key),
        })
    }
}

fn looks_like_context_overflow(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    lower.contains("context_length") || lower.contains("context length") || lower.contains("maximum context")
}

/// Maps an HTTP status and body to the backend error taxonomy.
pub(crate) fn classify_status(status: u16, body: &str) -> BackendError {
    let message = body.chars().take(500).collect::<String>();
    match status {
        401 | 403 => BackendError::Credential(message),
        413 => BackendError::ContextLimit(message),
        400 if looks_like_context_overflow(body) => BackendError::ContextLimit(message),
        408 | 429 | 500..=599 => BackendError::Transient {
            status: Some(status),
            message,
        },
        _ => BackendError::Fatal {
            status: Some(status),
            message,
        },
    }
}

pub(crate) fn parse_completion(body: &Value) -> Result<ChatResponse, BackendError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Fatal {
            status: None,
            message: "response has no choices[0].message.content".into(),
        })?;
    Ok(ChatResponse {
        text: text.to_string(),
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .header(self.auth_header.as_str(), self.auth_value.as_str())
            .json(&req.to_body())
            .send()
            .map_err(|e| BackendError::Transient {
                status: e.status().map(|s| s.as_u16()),
                message: e.to_string(),
            })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendError::Transient {
            status: Some(status),
            message: e.to_string(),
        })?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &text));
        }
        let body: Value = serde_json::from_str(&text).map_err(|e| BackendError::Fatal {
            status: Some(status),
            message: format!("response is not JSON: {e}"),
        })?;
        parse_completion(&body)
    }
}
