use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};
use crate::text::count_tokens;

/// Client for an OpenAI-style `/chat/completions` endpoint.
pub struct OpenAiChatBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiChatBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(OpenAiChatBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            client,
        })
    }

    /// Reads the bearer token from `env_var` if it is set.
    pub fn from_env(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        env_var: &str,
        timeout: Duration,
    ) -> Result<Self, LlmError> {
        Self::new(endpoint, model, std::env::var(env_var).ok(), timeout)
    }

    fn body(req: &ChatRequest) -> Value {
        json!({
            "model": req.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "seed": req.seed,
            "max_tokens": req.max_output_tokens,
        })
    }
}

fn parse_completion(req: &ChatRequest, v: &Value) -> Result<ChatResponse, LlmError> {
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| LlmError::MalformedResponse(format!("no choices[0].message.content in {v}")))?
        .to_string();
    let usage = &v["usage"];
    let prompt_tokens = usage["prompt_tokens"]
        .as_u64()
        .unwrap_or_else(|| count_tokens(&req.prompt) as u64);
    let completion_tokens = usage["completion_tokens"]
        .as_u64()
        .unwrap_or_else(|| count_tokens(&text) as u64);
    Ok(ChatResponse {
        text,
        prompt_tokens,
        completion_tokens,
    })
}

impl ChatBackend for OpenAiChatBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        let mut builder = self.client.post(&self.endpoint).json(&Self::body(req));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let v: Value =
            serde_json::from_str(&body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parse_completion(req, &v)
    }
}
