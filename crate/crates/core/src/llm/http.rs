//! Chat-completions-compatible HTTP backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, TokenUsage};

/// Environment variable holding the bearer token. Everything else comes
/// from the config file.
pub const ENV_API_KEY: &str = "DUALCHECKER_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl HttpBackendConfig {
    /// Take the API key from `DUALCHECKER_API_KEY` when it is set.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_API_KEY) {
            self.api_key = Some(v);
        }
        self
    }
}

#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireReplyMessage,
}

#[derive(Debug, Deserialize)]
struct WireReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("has_api_key", &self.config.api_key.is_some())
            .finish()
    }
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }
}

/// Pull the first choice's message content out of a chat-completions body.
pub(crate) fn decode_body(body: &str) -> Result<(String, Option<TokenUsage>), BackendError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| BackendError::BadResponse(e.to_string()))?;
    let text = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::BadResponse("no choices".into()))?
        .message
        .content
        .unwrap_or_default();
    let usage = wire.usage.map(|u| TokenUsage {
        prompt_tokens: u.prompt_tokens,
        completion_tokens: u.completion_tokens,
    });
    Ok((text, usage))
}

impl ChatBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn send(&self, req: &ChatRequest) -> Result<ChatReply, BackendError> {
        let mut messages = Vec::with_capacity(2);
        if !req.system_text.is_empty() {
            messages.push(WireMessage {
                role: "system",
                content: &req.system_text,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &req.user_text,
        });
        let body = WireRequest {
            model: &self.config.model,
            messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        let (content, usage) = decode_body(&text)?;
        Ok(ChatReply {
            text: content,
            tag: req.tag.clone(),
            backend_name: self.config.model.clone(),
            usage,
        })
    }
}
