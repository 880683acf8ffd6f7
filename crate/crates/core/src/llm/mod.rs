//! Chat-completion backends.
//!
//! [`LlmBackend`] is the request-level interface implemented by the HTTP
//! client ([`HttpBackend`]) and the seeded test double ([`MockBackend`]).
//! [`Gateway`] wraps a backend with fixed generation parameters, a
//! content-addressed disk cache and a bound on in-flight requests; the
//! augmentation stages only talk to a [`Completer`].

mod cache;
mod gateway;
mod http;
mod mock;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, DiskCache};
pub use gateway::{Completer, Gateway, GatewayStats};
pub use http::{backoff_schedule, HttpBackend};
pub use mock::{MockBackend, MockRule, MockScenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Base URL; requests go to `<endpoint>/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub request_timeout_ms: u64,
    pub cache_dir: Option<PathBuf>,
    pub concurrency_limit: usize,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 1.0,
            max_tokens: 512,
            max_retries: 3,
            retry_backoff_ms: 500,
            request_timeout_ms: 60_000,
            cache_dir: None,
            concurrency_limit: 4,
            api_key_env: "LLM_API_KEY".into(),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidConfig(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.concurrency_limit < 1 {
            return Err(LlmError::InvalidConfig(
                "concurrency_limit must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> LlmParams {
        LlmParams {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    pub fn retry_backoff(&self) -> Duration {
        Duration::from_millis(self.retry_backoff_ms)
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}

/// Generation parameters shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl LlmParams {
    pub fn request(&self, prompt: impl Into<String>, sample: u32) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            prompt: prompt.into(),
            sample,
        }
    }
}

/// One prompt plus a snapshot of the parameters it is sent with.
///
/// `sample` distinguishes repeated draws for the same prompt; it is part of
/// the cache key but never sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub prompt: String,
    #[serde(default)]
    pub sample: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    /// Unix seconds at which the response was first produced. Replayed
    /// unchanged from the cache; absent for mock responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created: Option<u64>,
    #[serde(skip)]
    pub from_cache: bool,
}

impl CompletionResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: None,
            usage: None,
            created: None,
            from_cache: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("invalid LLM config: {0}")]
    InvalidConfig(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Http {
        status: u16,
        body: String,
        attempts: u32,
    },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("malformed completion response: {message}")]
    Malformed { message: String, body: String },
    #[error("no mock rule matches prompt {0:?}")]
    NoMockRule(String),
    #[error("invalid mock scenario: {0}")]
    Scenario(String),
    #[error("cache: {0}")]
    Cache(String),
}

impl LlmError {
    /// Number of network attempts made before the error, when known.
    pub fn attempts(&self) -> Option<u32> {
        match self {
            LlmError::Http { attempts, .. } | LlmError::Transport { attempts, .. } => {
                Some(*attempts)
            }
            _ => None,
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;
}

impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<T: LlmBackend + ?Sized> LlmBackend for Box<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }
}

pub(crate) fn excerpt(s: &str, max_chars: usize) -> String {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}
