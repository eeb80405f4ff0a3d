use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{content_digest, Embedder, EmbeddingError, EmbeddingVector};

#[derive(Serialize, Deserialize)]
struct Line {
    embedder_id: String,
    digest: String,
    values: EmbeddingVector,
}

/// Memoizes an embedder by content digest, optionally persisting to a JSONL
/// file. Lines written by other embedders are ignored on load.
pub struct CachedEmbedder<E> {
    inner: E,
    id: String,
    entries: RwLock<HashMap<String, EmbeddingVector>>,
    file: Option<Mutex<File>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn in_memory(inner: E) -> Self {
        let id = inner.id();
        CachedEmbedder {
            inner,
            id,
            entries: RwLock::default(),
            file: None,
        }
    }

    pub fn open(inner: E, path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let err = |e: std::io::Error| EmbeddingError::Cache(format!("{}: {e}", path.display()));
        let id = inner.id();
        let mut entries = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path).map_err(err)?).lines().enumerate() {
                let line = line.map_err(err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let l: Line = serde_json::from_str(&line).map_err(|e| {
                    EmbeddingError::Cache(format!("{} line {}: {e}", path.display(), i + 1))
                })?;
                if l.embedder_id == id {
                    entries.insert(l.digest, l.values);
                }
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(err)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
        Ok(CachedEmbedder {
            inner,
            id,
            entries: RwLock::new(entries),
            file: Some(Mutex::new(file)),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn store(&self, digest: String, v: &EmbeddingVector) -> Result<(), EmbeddingError> {
        let mut entries = self.entries.write().unwrap();
        if entries.contains_key(&digest) {
            return Ok(());
        }
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(&Line {
                embedder_id: self.id.clone(),
                digest: digest.clone(),
                values: v.clone(),
            })
            .map_err(|e| EmbeddingError::Cache(e.to_string()))?;
            line.push('\n');
            file.lock()
                .unwrap()
                .write_all(line.as_bytes())
                .map_err(|e| EmbeddingError::Cache(e.to_string()))?;
        }
        entries.insert(digest, v.clone());
        Ok(())
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let digest = content_digest(text);
        if let Some(v) = self.entries.read().unwrap().get(&digest) {
            return Ok(v.clone());
        }
        let v = self.inner.embed(text)?;
        self.store(digest, &v)?;
        Ok(v)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        let digests: Vec<String> = texts.iter().map(|t| content_digest(t)).collect();
        let mut out: Vec<Option<EmbeddingVector>> = {
            let entries = self.entries.read().unwrap();
            digests.iter().map(|d| entries.get(d).cloned()).collect()
        };
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let fresh = self.inner.embed_batch(&batch)?;
            for (&i, v) in missing.iter().zip(fresh) {
                self.store(digests[i].clone(), &v)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::embedding::HashEmbedder;

    struct Counting(HashEmbedder, AtomicUsize);

    impl Embedder for Counting {
        fn id(&self) -> String {
            self.0.id()
        }
        fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            self.0.embed(text)
        }
    }

    #[test]
    fn memoizes_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let h = HashEmbedder::new(16, 3).unwrap();
        {
            let c = CachedEmbedder::open(Counting(h, AtomicUsize::new(0)), &path).unwrap();
            let a = c.embed("alpha").unwrap();
            assert_eq!(c.embed("alpha").unwrap(), a);
            c.embed_batch(&["alpha", "beta", "beta"]).unwrap();
            assert_eq!(c.inner.1.load(Ordering::SeqCst), 3);
            assert_eq!(c.len(), 2);
        }
        let c = CachedEmbedder::open(Counting(h, AtomicUsize::new(0)), &path).unwrap();
        assert_eq!(c.embed("beta").unwrap(), h.embed("beta").unwrap());
        assert_eq!(c.inner.1.load(Ordering::SeqCst), 0);

        // A different embedder ignores those lines.
        let other = CachedEmbedder::open(HashEmbedder::new(16, 4).unwrap(), &path).unwrap();
        assert!(other.is_empty());
    }
}
