//! Chat-completion backends and the retrying client used by every LLM call.

mod http;
pub(crate) mod parse;
mod scripted;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpBackendConfig};
pub use parse::{parse_teacher_reply, render_reply, ParseFailure, ParsedTeacherOutput, Prediction};
pub use scripted::{KeyedScriptBackend, ScriptEntry, ScriptedBackend};

/// Retries allowed per request.
pub const MAX_RETRIES: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Correlation id echoed in the reply. The engine uses
    /// `teacher/<id>/<attempt>`, `rationale/<id>` and `borderline/<id>`.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: 1.0,
            max_tokens: 512,
            tag: tag.into(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_text.is_empty() {
            return Err(BackendError::InvalidRequest("empty user text".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Full prompt text, used by script tripwires.
    pub fn full_text(&self) -> String {
        format!("{}\n{}", self.system_text, self.user_text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    pub tag: String,
    pub backend_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("non-success status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("injected failure: {0}")]
    Injected(String),
    #[error("script exhausted at call {call}")]
    ScriptExhausted { call: u64 },
    #[error("script entry {call} expected the request to contain {expected:?}")]
    ScriptMismatch { call: u64, expected: String },
    #[error("no scripted reply for tag {0:?}")]
    UnknownTag(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    /// Transport-level failures are retried; script and request errors are not.
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport(_)
                | BackendError::Status { .. }
                | BackendError::Timeout
                | BackendError::BadResponse(_)
                | BackendError::Injected(_)
        )
    }
}

/// A chat-completion endpoint. Implementations must tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    /// One attempt, no retry.
    fn send(&self, req: &ChatRequest) -> Result<ChatReply, BackendError>;

    /// Skip the first `calls` sends when resuming a run. Stateless backends ignore it.
    fn fast_forward(&self, _calls: u64) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Delay before the first retry; doubles per further retry.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        Self {
            base_delay: Duration::ZERO,
        }
    }

    fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, Serialize)]
struct TranscriptRecord<'a> {
    tag: &'a str,
    backend: &'a str,
    attempt: u32,
    system: &'a str,
    user: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reply: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    latency_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    usage: Option<TokenUsage>,
}

/// Backend plus retry policy plus an optional JSONL transcript of every attempt.
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    transcript: Option<Mutex<File>>,
    sends: AtomicU64,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.name())
            .field("retry", &self.retry)
            .field("sends", &self.sends.load(Ordering::SeqCst))
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>, retry: RetryPolicy) -> Self {
        Self {
            backend,
            retry,
            transcript: None,
            sends: AtomicU64::new(0),
        }
    }

    /// Append attempt records to `path`.
    pub fn with_transcript(mut self, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.transcript = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Number of `send` attempts issued so far, including failed ones.
    pub fn sends(&self) -> u64 {
        self.sends.load(Ordering::SeqCst)
    }

    /// Resume bookkeeping: forward the backend past `calls` earlier sends.
    pub fn fast_forward(&self, calls: u64) {
        self.backend.fast_forward(calls);
        self.sends.store(calls, Ordering::SeqCst);
    }

    /// Send `req`, retrying once on a retriable failure.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatReply, BackendError> {
        req.validate()?;
        let mut attempt = 0;
        loop {
            let started = Instant::now();
            self.sends.fetch_add(1, Ordering::SeqCst);
            let result = self.backend.send(req);
            self.record(req, attempt, &result, started.elapsed());
            match result {
                Ok(reply) => return Ok(reply),
                Err(err) if err.is_retriable() && attempt < MAX_RETRIES => {
                    attempt += 1;
                    log::warn!("{} call {} failed ({err}); retrying", self.backend.name(), req.tag);
                    std::thread::sleep(self.retry.delay(attempt));
                }
                Err(err) => return Err(err),
            }
        }
    }

    fn record(&self, req: &ChatRequest, attempt: u32, result: &Result<ChatReply, BackendError>, latency: Duration) {
        let Some(file) = &self.transcript else {
            return;
        };
        let rec = TranscriptRecord {
            tag: &req.tag,
            backend: self.backend.name(),
            attempt,
            system: &req.system_text,
            user: &req.user_text,
            reply: result.as_ref().ok().map(|r| r.text.as_str()),
            error: result.as_ref().err().map(|e| e.to_string()),
            latency_ms: latency.as_millis(),
            usage: result.as_ref().ok().and_then(|r| r.usage),
        };
        let line = serde_json::to_string(&rec).expect("transcript record serializes");
        let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = writeln!(f, "{line}") {
            log::warn!("transcript write failed: {e}");
        }
    }
}

/// Correlation tags.
pub mod tags {
    pub fn teacher(sample_id: &str, attempt: u32) -> String {
        format!("teacher/{sample_id}/{attempt}")
    }

    pub fn rationale(sample_id: &str) -> String {
        format!("rationale/{sample_id}")
    }

    pub fn borderline(sample_id: &str) -> String {
        format!("borderline/{sample_id}")
    }
}
