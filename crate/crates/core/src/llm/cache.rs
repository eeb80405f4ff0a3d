use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: ChatResponse,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

/// Request-digest keyed store of responses, optionally backed by an
/// append-only JSONL file. Later entries for a key override earlier ones.
#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: RwLock<HashMap<String, CacheEntry>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists and appends new entries to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let cache_err = |e: std::io::Error| LlmError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(cache_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(cache_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheEntry = serde_json::from_str(&line).map_err(|e| {
                    LlmError::Cache(format!("{} line {}: {e}", path.display(), i + 1))
                })?;
                entries.insert(entry.key.clone(), entry);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(cache_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(cache_err)?;
        Ok(ResponseCache {
            entries: RwLock::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: String, response: ChatResponse) -> Result<(), LlmError> {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let entry = CacheEntry {
            key: key.clone(),
            response,
            created_at,
        };
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(&entry).map_err(|e| LlmError::Cache(e.to_string()))?;
            line.push('\n');
            let mut f = file.lock().unwrap();
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| LlmError::Cache(e.to_string()))?;
        }
        self.entries.write().unwrap().insert(key, entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Every request goes to the inner backend; nothing is cached.
    Live,
    /// Serve hits from the cache, forward misses and store their responses.
    Record,
    /// Serve only from the cache; misses are errors.
    Replay,
}

pub struct CachedBackend {
    model_name: String,
    inner: Option<Box<dyn ChatBackend>>,
    cache: ResponseCache,
    mode: CacheMode,
}

impl CachedBackend {
    pub fn new(inner: Box<dyn ChatBackend>, cache: ResponseCache, mode: CacheMode) -> Self {
        CachedBackend {
            model_name: inner.model_name().to_string(),
            inner: Some(inner),
            cache,
            mode,
        }
    }

    /// Replay-only backend that never needs a live model.
    pub fn replay(model_name: impl Into<String>, cache: ResponseCache) -> Self {
        CachedBackend {
            model_name: model_name.into(),
            inner: None,
            cache,
            mode: CacheMode::Replay,
        }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    fn forward(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        match &self.inner {
            Some(b) => b.complete(req),
            None => Err(LlmError::ReplayMiss { digest: req.digest() }),
        }
    }
}

impl ChatBackend for CachedBackend {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        match self.mode {
            CacheMode::Live => self.forward(req),
            CacheMode::Replay => {
                let digest = req.digest();
                self.cache
                    .get(&digest)
                    .map(|e| e.response)
                    .ok_or(LlmError::ReplayMiss { digest })
            }
            CacheMode::Record => {
                let digest = req.digest();
                if let Some(e) = self.cache.get(&digest) {
                    return Ok(e.response);
                }
                let resp = self.forward(req)?;
                self.cache.insert(digest, resp.clone())?;
                Ok(resp)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockBackend;
    use std::sync::Arc;

    #[test]
    fn record_then_hit() {
        let mock = Arc::new(MockBackend::fixed("m", "ok"));
        let b = CachedBackend::new(Box::new(mock.clone()), ResponseCache::in_memory(), CacheMode::Record);
        let req = ChatRequest::new("m", "hello");
        assert_eq!(b.complete(&req).unwrap().text, "ok");
        assert_eq!(b.complete(&req).unwrap().text, "ok");
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn replay_miss_carries_digest() {
        let b = CachedBackend::replay("m", ResponseCache::in_memory());
        let req = ChatRequest::new("m", "hello");
        match b.complete(&req).unwrap_err() {
            LlmError::ReplayMiss { digest } => assert_eq!(digest, req.digest()),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn live_mode_bypasses_cache() {
        let mock = Arc::new(MockBackend::fixed("m", "ok"));
        let b = CachedBackend::new(Box::new(mock.clone()), ResponseCache::in_memory(), CacheMode::Live);
        let req = ChatRequest::new("m", "hello");
        b.complete(&req).unwrap();
        b.complete(&req).unwrap();
        assert_eq!(mock.calls(), 2);
        assert!(b.cache().is_empty());
    }

    #[test]
    fn persisted_cache_replays_after_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        let req = ChatRequest::new("m", "hello");
        {
            let mock = MockBackend::fixed("m", "recorded");
            let b = CachedBackend::new(Box::new(mock), ResponseCache::open(&path).unwrap(), CacheMode::Record);
            b.complete(&req).unwrap();
        }
        let b = CachedBackend::replay("m", ResponseCache::open(&path).unwrap());
        assert_eq!(b.complete(&req).unwrap().text, "recorded");
        assert!(b.complete(&ChatRequest::new("m", "other")).is_err());
    }
}
