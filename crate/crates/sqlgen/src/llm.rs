//! Chat-completions client with bounded retries, and the model trait the
//! harness and service call through.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub const DEFAULT_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("chat endpoint not configured")]
    Unconfigured,
    #[error("request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("endpoint rejected the request ({status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub attempts: u32,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            api_key: None,
            timeout_secs: 120,
            attempts: DEFAULT_ATTEMPTS,
            backoff_ms: 500,
        }
    }
}

impl ChatConfig {
    /// Fills unset fields from `DBROUTE_LLM_ENDPOINT`, `DBROUTE_LLM_MODEL`
    /// and `DBROUTE_LLM_API_KEY` (or `OPENAI_API_KEY`).
    pub fn with_env(mut self) -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if self.endpoint.is_empty() {
            if let Some(e) = var("DBROUTE_LLM_ENDPOINT") {
                self.endpoint = e;
            }
        }
        if let Some(m) = var("DBROUTE_LLM_MODEL") {
            self.model = m;
        }
        if self.api_key.is_none() {
            self.api_key = var("DBROUTE_LLM_API_KEY").or_else(|| var("OPENAI_API_KEY"));
        }
        self
    }

    pub fn is_configured(&self) -> bool {
        !self.endpoint.is_empty()
    }

    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// Blocking HTTP client for the chat-completions interface.
pub struct HttpChatModel {
    config: ChatConfig,
    client: reqwest::blocking::Client,
}

impl HttpChatModel {
    pub fn new(config: ChatConfig) -> Result<Self, LlmError> {
        if !config.is_configured() {
            return Err(LlmError::Unconfigured);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Malformed(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<Completion, Failure> {
        let mut req = self.client.post(self.config.url()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retry(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Retry(format!("HTTP {}: {text}", status.as_u16())));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(LlmError::Rejected {
                status: status.as_u16(),
                body: text,
            }));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| Failure::Fatal(LlmError::Malformed(e.to_string())))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Failure::Fatal(LlmError::Malformed("no choices".into())))?;
        let usage = parsed.usage.unwrap_or_else(|| Usage {
            prompt_tokens: body.messages.iter().map(|m| approximate_tokens(&m.content)).sum(),
            completion_tokens: approximate_tokens(&choice.message.content),
        });
        Ok(Completion {
            text: choice.message.content,
            usage,
        })
    }
}

enum Failure {
    Retry(String),
    Fatal(LlmError),
}

impl ChatModel for HttpChatModel {
    fn complete(&self, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
        };
        let attempts = self.config.attempts.max(1);
        let mut last = String::new();
        for i in 0..attempts {
            if i > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (i - 1)));
            }
            match self.attempt(&body) {
                Ok(c) => return Ok(c),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    warn!(attempt = i + 1, error = %msg, "chat request failed");
                    last = msg;
                }
            }
        }
        Err(LlmError::Exhausted { attempts, last })
    }
}

/// Rough token count for replies from models that report no usage:
/// whitespace-separated words.
pub fn approximate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
