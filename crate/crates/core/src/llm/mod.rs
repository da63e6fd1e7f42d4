//! Prompt assembly and chat-completion calls.
//!
//! [`assemble_prompt`] builds the three-key JSON envelope
//! `{"schema": ..., "graph": ..., "user query": ...}` handed to the model.
//! [`Bridge`] sends it to a [`ChatBackend`] a configured number of times and
//! can record the answers to a cassette file, or replay them from one
//! without touching the network.

mod backend;
mod bridge;
mod cassette;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KnowledgeGraph, SchemaPrompt};

pub use backend::{BackendError, ChatBackend, ChatRequest, ChatResponse, HttpBackend};
pub use bridge::{Bridge, BridgeMode, ModelAnswer};
pub use cassette::{cassette_key, Cassette};

/// Environment variable holding the API key for live calls.
pub const DEFAULT_API_KEY_ENV: &str = "TRACEKG_API_KEY";

pub const SYSTEM_PROMPT: &str = "You are a performance engineer analysing a Linux kernel execution trace. \
The user message is a JSON object holding a schema, the trace data for one time window, and a question. \
Answer the question using only that data. State the answer first, then a one-sentence justification. \
For multiple-choice questions name the option letter in parentheses, e.g. (B). \
For true-or-false questions start with True or False.";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("graph JSON is not canonical: {0}")]
    Format(String),
    #[error("invalid LLM config: {0}")]
    Config(String),
    #[error("credential error: {0}")]
    Credential(String),
    #[error("transport error after {attempts} attempt(s){}: {message}", status.map(|s| format!(" (last status {s})")).unwrap_or_default())]
    Transport {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("prompt of ~{estimated} tokens exceeds the context limit of {limit} tokens")]
    ContextLimit { estimated: u64, limit: u64 },
    #[error("cassette has no recording for {hash}")]
    CassetteMiss { hash: String },
    #[error("cassette {path}: {message}")]
    Cassette { path: String, message: String },
}

/// Model settings for one ask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub samples: u32,
    pub schema_enabled: bool,
    pub timeout_secs: u64,
    pub max_output_tokens: u32,
    /// Prompts estimated above this many tokens fail before any call.
    pub context_limit_tokens: u64,
    pub api_key_env: String,
    pub auth_header: String,
    /// `{key}` is replaced by the API key.
    pub auth_template: String,
    /// Concurrent asks allowed through one bridge.
    pub max_in_flight: usize,
    /// Attempts per sample on transient failures.
    pub max_attempts: u32,
    pub retry_backoff_ms: u64,
    /// Extra top-level request body fields, passed through verbatim.
    pub options: serde_json::Map<String, serde_json::Value>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.5,
            samples: 3,
            schema_enabled: true,
            timeout_secs: 120,
            max_output_tokens: 1024,
            context_limit_tokens: 128_000,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            auth_header: "Authorization".into(),
            auth_template: "Bearer {key}".into(),
            max_in_flight: 4,
            max_attempts: 3,
            retry_backoff_ms: 500,
            options: serde_json::Map::new(),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(LlmError::Config(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.samples == 0 {
            return Err(LlmError::Config("samples must be at least 1".into()));
        }
        if self.max_in_flight == 0 || self.max_attempts == 0 {
            return Err(LlmError::Config(
                "max_in_flight and max_attempts must be at least 1".into(),
            ));
        }
        if self.model.is_empty() {
            return Err(LlmError::Config("model must not be empty".into()));
        }
        Ok(())
    }
}

/// Trace data carried by an envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptContext {
    /// Canonical knowledge-graph JSON, embedded as an object.
    Graph(String),
    /// Flat state-system interval dump.
    StateValues(String),
    /// Raw event lines.
    Events(String),
}

/// Schema, trace data and question as presented to the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEnvelope {
    pub schema: String,
    pub context: PromptContext,
    pub user_query: String,
}

impl PromptEnvelope {
    /// Three-key JSON object: schema, trace data, then the user query.
    pub fn to_json(&self) -> String {
        let quote = |s: &str| serde_json::to_string(s).expect("string serialization is infallible");
        let (key, body) = match &self.context {
            PromptContext::Graph(json) => ("graph", json.clone()),
            PromptContext::StateValues(text) => ("state values", quote(text)),
            PromptContext::Events(text) => ("events", quote(text)),
        };
        format!(
            "{{\"schema\":{},\"{key}\":{body},\"user query\":{}}}",
            quote(&self.schema),
            quote(&self.user_query)
        )
    }

    /// Rough token count used for the context-limit check.
    pub fn estimated_tokens(&self) -> u64 {
        (self.to_json().len() as u64).div_ceil(4)
    }
}

fn check_question(question: &str) -> Result<(), LlmError> {
    if question.trim().is_empty() {
        return Err(LlmError::EmptyQuestion);
    }
    Ok(())
}

/// Envelope for graph grounding. With `schema_enabled` false the schema
/// field is kept but empty; the graph is unchanged.
pub fn assemble_prompt(
    schema: &SchemaPrompt,
    graph_json: &str,
    question: &str,
    schema_enabled: bool,
) -> Result<PromptEnvelope, LlmError> {
    check_question(question)?;
    let graph = KnowledgeGraph::from_json(graph_json).map_err(|e| LlmError::Format(e.to_string()))?;
    if graph.to_canonical_json() != graph_json {
        return Err(LlmError::Format("graph JSON differs from its canonical form".into()));
    }
    Ok(PromptEnvelope {
        schema: if schema_enabled {
            schema.as_str().to_string()
        } else {
            String::new()
        },
        context: PromptContext::Graph(graph_json.to_string()),
        user_query: question.to_string(),
    })
}

/// Envelope for the state-values baseline: no schema, no entities.
pub fn assemble_baseline_prompt(state_values: &str, question: &str) -> Result<PromptEnvelope, LlmError> {
    check_question(question)?;
    Ok(PromptEnvelope {
        schema: String::new(),
        context: PromptContext::StateValues(state_values.to_string()),
        user_query: question.to_string(),
    })
}

/// Envelope carrying raw events; typically too large for any context window.
pub fn assemble_events_prompt(events: &str, question: &str) -> Result<PromptEnvelope, LlmError> {
    check_question(question)?;
    Ok(PromptEnvelope {
        schema: String::new(),
        context: PromptContext::Events(events.to_string()),
        user_query: question.to_string(),
    })
}
