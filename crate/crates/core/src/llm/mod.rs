//! Model backends, retrying completion, reply sanitizing and parsing.

mod http;
mod mock;
mod reply;
mod sanitize;

pub use http::HttpBackend;
pub use mock::{Fault, FailingBackend, OracleBackend, RecordingBackend, ScriptedBackend, ScriptFile};
pub use reply::{
    parse_labeler_reply, parse_refiner_reply, HunkEntry, LabelerReply, RefinerEntry, RefinerReply, ReplyError,
    ReplyWarning,
};
pub use sanitize::{parse_json_lenient, repair_json, sanitize};

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{estimate_tokens, PromptRequest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("backend returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("empty prompt")]
    EmptyPrompt,
}

impl BackendError {
    pub fn from_status(code: u16, body: impl Into<String>) -> Self {
        let body = body.into();
        match code {
            401 | 403 => BackendError::Auth(format!("HTTP {code}: {body}")),
            _ => BackendError::Status { code, body },
        }
    }

    /// Worth retrying: network failures, timeouts, throttling and server errors.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout(_) => true,
            BackendError::Status { code, .. } => *code == 408 || *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        TokenUsage { input_tokens, output_tokens }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
    }
}

/// What a backend hands back for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Usage as reported by the backend, if it reports any.
    pub usage: Option<TokenUsage>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion { text: text.into(), usage: None }
    }
}

/// A single-turn completion endpoint. Implementations must be safe to call
/// from several worker threads at once.
pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &PromptRequest) -> Result<Completion, BackendError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, prompt: &PromptRequest) -> Result<Completion, BackendError> {
        (**self).complete(prompt)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, prompt: &PromptRequest) -> Result<Completion, BackendError> {
        (**self).complete(prompt)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// True when the counts come from [`estimate_tokens`] rather than the backend.
    pub estimated: bool,
}

impl Usage {
    pub fn tokens(&self) -> TokenUsage {
        TokenUsage::new(self.input_tokens, self.output_tokens)
    }
}

/// Sums counts; the total is estimated if any part was.
impl std::ops::AddAssign for Usage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
        self.estimated |= rhs.estimated;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmResponse {
    pub raw_text: String,
    pub usage: Usage,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before retry number `attempt` (0-based): `base * 2^attempt`, capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(16)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Where and how to reach a hosted chat-completion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub temperature: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: "HUNKMARK_API_KEY".into(),
            timeout_secs: 120,
            max_retries: 3,
            temperature: 0.0,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_secs == 0 {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        if self.endpoint.trim().is_empty() {
            return Err(BackendError::Config("endpoint is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::Config("temperature must be a non-negative number".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            ..RetryPolicy::default()
        }
    }
}

/// A backend plus retry behaviour; the entry point the pipeline stages use.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.name())
            .field("retry", &self.retry)
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn Backend>, retry: RetryPolicy) -> Self {
        LlmClient { backend, retry }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Send one prompt. Transient failures are retried with exponential
    /// backoff; authentication and configuration errors are returned at once.
    pub fn complete(&self, prompt: &PromptRequest) -> Result<LlmResponse, BackendError> {
        if prompt.text.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let mut attempt = 0;
        loop {
            match self.backend.complete(prompt) {
                Ok(completion) => {
                    let usage = match completion.usage {
                        Some(u) => Usage {
                            input_tokens: u.input_tokens,
                            output_tokens: u.output_tokens,
                            estimated: false,
                        },
                        None => Usage {
                            input_tokens: estimate_tokens(&prompt.text),
                            output_tokens: estimate_tokens(&completion.text),
                            estimated: true,
                        },
                    };
                    return Ok(LlmResponse {
                        raw_text: completion.text,
                        usage,
                        attempts: attempt + 1,
                    });
                }
                Err(err) if err.is_transient() && attempt < self.retry.max_retries => {
                    log::warn!(
                        "{} request {} failed ({err}); retry {}/{}",
                        self.backend.name(),
                        prompt.key,
                        attempt + 1,
                        self.retry.max_retries
                    );
                    let delay = self.retry.delay(attempt);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    attempt += 1;
                }
                Err(BackendError::Status { code, body }) if code >= 500 || code == 429 || code == 408 => {
                    return Err(BackendError::Transport(format!("HTTP {code} after {} attempts: {body}", attempt + 1)))
                }
                Err(err) => return Err(err),
            }
        }
    }
}
