use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use corank_core::embedding::{CachedEmbedder, Embedder, HashEmbedder, HttpEmbedder};
use corank_core::eval::Gain;
use corank_core::llm::{
    CacheMode, CachedBackend, ChatBackend, ConcurrencyLimited, MockBackend, OpenAiChatBackend,
    ResponseCache, RetryPolicy, RetryingBackend, WithSampling,
};
use corank_core::rerank::{RerankConfig, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Retriever {
    #[default]
    Bm25,
    Dense,
}

impl Retriever {
    pub fn tag(self) -> &'static str {
        match self {
            Retriever::Bm25 => "bm25",
            Retriever::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Openai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Live,
    Record,
    Replay,
}

impl From<Mode> for CacheMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Live => CacheMode::Live,
            Mode::Record => CacheMode::Record,
            Mode::Replay => CacheMode::Replay,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub model: String,
    /// Model used for feature extraction; defaults to `model`.
    pub extraction_model: Option<String>,
    pub endpoint: String,
    pub api_key_env: String,
    pub mode: Mode,
    pub cache: Option<PathBuf>,
    pub parallelism: usize,
    pub temperature: f64,
    pub seed: u64,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            model: "mock-overlap".into(),
            extraction_model: None,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            mode: Mode::Live,
            cache: None,
            parallelism: 8,
            temperature: 1.0,
            seed: 42,
            max_attempts: 3,
            initial_backoff_ms: 1000,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub seed: u64,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub cache: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hash,
            dim: 256,
            seed: 13,
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: "text-embedding-3-small".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            cache: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    /// Feature sidecar; defaults to `<corpus stem>.features.jsonl` beside the corpus.
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub retriever: Retriever,
    #[serde(default = "default_retrieve_m")]
    pub retrieve_m: usize,
    #[serde(default = "default_price")]
    pub price_per_million: f64,
    /// nDCG gain: "linear" (default) or "exponential".
    #[serde(default)]
    pub gain: Gain,
    /// Strategies `rerank` runs when none are given on the command line.
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub rerank: RerankConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_retrieve_m() -> usize {
    200
}

fn default_price() -> f64 {
    0.4
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Reads a TOML config. Relative paths are taken relative to the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpus, &mut cfg.queries, &mut cfg.qrels, &mut cfg.output_dir] {
            resolve(base, p);
        }
        for p in [&mut cfg.features, &mut cfg.backend.cache, &mut cfg.embedder.cache]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.rerank.validate()?;
        if self.retrieve_m == 0 {
            bail!("retrieve_m must be positive");
        }
        if !(self.price_per_million >= 0.0 && self.price_per_million.is_finite()) {
            bail!("price_per_million must be a non-negative number");
        }
        if self.backend.parallelism == 0 {
            bail!("backend.parallelism must be positive");
        }
        if self.backend.mode != Mode::Live && self.backend.cache.is_none() {
            bail!("backend.mode = {:?} needs backend.cache", self.backend.mode);
        }
        Ok(())
    }

    pub fn features_path(&self) -> PathBuf {
        self.features.clone().unwrap_or_else(|| {
            let stem = self
                .corpus
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "corpus".into());
            self.corpus.with_file_name(format!("{stem}.features.jsonl"))
        })
    }

    pub fn extraction_model(&self) -> &str {
        self.backend
            .extraction_model
            .as_deref()
            .unwrap_or(&self.backend.model)
    }

    /// Strategies to run: the explicit list, else the configured list, else
    /// the single `rerank.strategy`.
    pub fn strategies(&self, explicit: &[Strategy]) -> Vec<Strategy> {
        if !explicit.is_empty() {
            explicit.to_vec()
        } else if !self.strategies.is_empty() {
            self.strategies.clone()
        } else {
            vec![self.rerank.strategy]
        }
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

/// Builds the layered chat backend for `model`: HTTP client or mock at the
/// bottom, then retries and the in-flight limit, then the record/replay
/// cache, with the configured sampling settings on top.
pub fn build_backend(cfg: &BackendConfig, model: &str) -> Result<Arc<dyn ChatBackend>> {
    let cache = match &cfg.cache {
        Some(p) if cfg.mode != Mode::Live => {
            if cfg.mode == Mode::Replay {
                require_file(p, "replay cache")?;
            }
            Some(ResponseCache::open(p)?)
        }
        _ => None,
    };
    let base: Box<dyn ChatBackend> = match cfg.kind {
        BackendKind::Mock => Box::new(MockBackend::heuristic(model)),
        BackendKind::Openai => {
            let client = OpenAiChatBackend::from_env(
                cfg.endpoint.clone(),
                model,
                &cfg.api_key_env,
                Duration::from_secs(cfg.timeout_secs),
            )?;
            let policy = RetryPolicy {
                max_attempts: cfg.max_attempts.max(1),
                initial_backoff: Duration::from_millis(cfg.initial_backoff_ms),
                ..RetryPolicy::default()
            };
            Box::new(ConcurrencyLimited::new(
                RetryingBackend::new(client, policy),
                cfg.parallelism,
            ))
        }
    };
    let layered: Box<dyn ChatBackend> = match (cache, cfg.mode) {
        (Some(cache), Mode::Replay) => Box::new(CachedBackend::replay(model, cache)),
        (Some(cache), mode) => Box::new(CachedBackend::new(base, cache, mode.into())),
        (None, _) => base,
    };
    Ok(Arc::new(WithSampling::new(layered, cfg.temperature, cfg.seed)))
}

pub fn build_embedder(cfg: &EmbedderConfig) -> Result<Arc<dyn Embedder>> {
    let inner: Box<dyn Embedder> = match cfg.kind {
        EmbedderKind::Hash => Box::new(HashEmbedder::new(cfg.dim, cfg.seed)?),
        EmbedderKind::Http => Box::new(HttpEmbedder::new(
            cfg.endpoint.clone(),
            cfg.model.clone(),
            std::env::var(&cfg.api_key_env).ok(),
            Duration::from_secs(120),
        )?),
    };
    Ok(match &cfg.cache {
        Some(p) => Arc::new(CachedEmbedder::open(inner, p)?),
        None => Arc::new(CachedEmbedder::in_memory(inner)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(
            &path,
            r#"
corpus = "data/corpus.jsonl"
queries = "/abs/queries.jsonl"
qrels = "qrels.txt"
strategies = ["vanilla", "corank"]

[rerank]
fine_k = 10

[backend]
mode = "record"
cache = "cache.jsonl"
"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus, dir.path().join("data/corpus.jsonl"));
        assert_eq!(cfg.queries, PathBuf::from("/abs/queries.jsonl"));
        assert_eq!(cfg.features_path(), dir.path().join("data/corpus.features.jsonl"));
        assert_eq!(cfg.backend.cache.as_deref(), Some(dir.path().join("cache.jsonl").as_path()));
        assert_eq!(cfg.rerank.fine_k, 10);
        assert_eq!(cfg.rerank.coarse_m, 200);
        assert_eq!(cfg.retrieve_m, 200);
        assert_eq!(cfg.gain, Gain::Linear);
        assert_eq!(cfg.strategies(&[]), vec![Strategy::Vanilla, Strategy::CoRank]);
        assert_eq!(cfg.strategies(&[Strategy::Sliding]), vec![Strategy::Sliding]);
        cfg.validate().unwrap();
    }

    #[test]
    fn replay_without_cache_rejected() {
        let cfg: ExperimentConfig = toml::from_str(
            "corpus='c'\nqueries='q'\nqrels='r'\n[backend]\nmode='replay'\n",
        )
        .unwrap();
        assert!(cfg.validate().is_err());
        let missing = BackendConfig {
            mode: Mode::Replay,
            cache: Some("/nonexistent/cache.jsonl".into()),
            ..Default::default()
        };
        assert!(build_backend(&missing, "m").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("corpus='c'\nqueries='q'\nqrels='r'\nbogus=1\n").is_err());
        let cfg: ExperimentConfig =
            toml::from_str("corpus='c'\nqueries='q'\nqrels='r'\ngain='exponential'\n").unwrap();
        assert_eq!(cfg.gain, Gain::Exponential);
    }
}
