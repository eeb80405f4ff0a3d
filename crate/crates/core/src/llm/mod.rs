//! Chat-completion backends.
//!
//! Everything that talks to a model goes through [`ChatBackend`]. Concrete
//! backends are layered: an HTTP client at the bottom, wrapped by retries, a
//! concurrency limit and finally the record/replay cache.

mod cache;
mod http;
mod mock;
mod retry;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, CacheMode, CachedBackend, ResponseCache};
pub use http::OpenAiChatBackend;
pub use mock::{heuristic_extraction_response, mock_rank_by_overlap, MockBackend};
pub use retry::{ConcurrencyLimited, RetryPolicy, RetryingBackend};
#[cfg(test)]
pub(crate) use http::test_server;

pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_SEED: u64 = 42;
pub const RERANK_MAX_OUTPUT_TOKENS: u32 = 2048;
pub const EXTRACTION_MAX_OUTPUT_TOKENS: u32 = 4096;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LlmError> },
    #[error("replay cache has no entry for request {digest}")]
    ReplayMiss { digest: String },
    #[error("cache: {0}")]
    Cache(String),
    #[error("mock: {0}")]
    Mock(String),
}

impl LlmError {
    /// Transport failures, rate limits and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(model_name: impl Into<String>, prompt: impl Into<String>) -> Self {
        ChatRequest {
            model_name: model_name.into(),
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            seed: DEFAULT_SEED,
            max_output_tokens: RERANK_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} must be a finite value >= 0",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 over (model_name, prompt, temperature, seed). Output-length
    /// limits do not participate.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(&(
            &self.model_name,
            &self.prompt,
            self.temperature,
            self.seed,
        ))
        .expect("request fields serialize");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait ChatBackend: Send + Sync {
    /// The model this backend answers as; recorded as extraction provenance.
    fn model_name(&self) -> &str;

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError>;

    /// A request for this backend's model with default sampling settings.
    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest::new(self.model_name(), prompt)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }

    fn request(&self, prompt: String) -> ChatRequest {
        (**self).request(prompt)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(req)
    }

    fn request(&self, prompt: String) -> ChatRequest {
        (**self).request(prompt)
    }
}

/// Stamps every request built through it with fixed sampling settings.
pub struct WithSampling<B> {
    inner: B,
    temperature: f64,
    seed: u64,
}

impl<B: ChatBackend> WithSampling<B> {
    pub fn new(inner: B, temperature: f64, seed: u64) -> Self {
        WithSampling { inner, temperature, seed }
    }
}

impl<B: ChatBackend> ChatBackend for WithSampling<B> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.inner.complete(req)
    }

    fn request(&self, prompt: String) -> ChatRequest {
        self.inner
            .request(prompt)
            .with_temperature(self.temperature)
            .with_seed(self.seed)
    }
}
