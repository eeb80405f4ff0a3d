use std::time::Duration;

use serde_json::{json, Value};

use super::{Embedder, EmbeddingError, EmbeddingVector};

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::Backend(e.to_string()))?;
        Ok(HttpEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            client,
        })
    }
}

fn parse_embeddings(v: &Value, n: usize) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    let data = v["data"]
        .as_array()
        .ok_or_else(|| EmbeddingError::Backend(format!("no data array in response: {v}")))?;
    if data.len() != n {
        return Err(EmbeddingError::Backend(format!(
            "asked for {n} embeddings, got {}",
            data.len()
        )));
    }
    let mut out: Vec<(u64, EmbeddingVector)> = Vec::with_capacity(n);
    for (i, item) in data.iter().enumerate() {
        let values = item["embedding"]
            .as_array()
            .ok_or_else(|| EmbeddingError::Backend("missing embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| EmbeddingError::Backend("non-numeric value".into())))
            .collect::<Result<Vec<_>, _>>()?;
        out.push((item["index"].as_u64().unwrap_or(i as u64), EmbeddingVector::new(values)));
    }
    out.sort_by_key(|(i, _)| *i);
    let dims: Vec<usize> = out.iter().map(|(_, v)| v.dim()).collect();
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(EmbeddingError::Backend("inconsistent embedding dimensions".into()));
    }
    Ok(out.into_iter().map(|(_, v)| v).collect())
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:{}", self.model)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyText);
        }
        let mut builder = self
            .client
            .post(&self.endpoint)
            .json(&json!({"model": self.model, "input": texts}));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| EmbeddingError::Backend(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| EmbeddingError::Backend(e.to_string()))?;
        if !status.is_success() {
            return Err(EmbeddingError::Backend(format!("HTTP {status}: {body}")));
        }
        let v: Value =
            serde_json::from_str(&body).map_err(|e| EmbeddingError::Backend(e.to_string()))?;
        parse_embeddings(&v, texts.len())
    }
}
