use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{CategoryPath, ExtractionError, FeatureSet};
use crate::corpus::write_atomic;

/// One line of the feature sidecar file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub doc_id: String,
    pub category_levels: CategoryPath,
    pub sections: Vec<String>,
    pub keywords: Vec<String>,
    pub pseudo_queries: Vec<String>,
    pub extractor_model: String,
}

impl FeatureRecord {
    pub fn new(doc_id: &str, fs: &FeatureSet) -> Self {
        FeatureRecord {
            doc_id: doc_id.to_string(),
            category_levels: fs.category.clone(),
            sections: fs.sections().to_vec(),
            keywords: fs.keywords().to_vec(),
            pseudo_queries: fs.pseudo_queries().to_vec(),
            extractor_model: fs.extractor_model.clone(),
        }
    }

    pub fn into_feature_set(self) -> Result<(String, FeatureSet), ExtractionError> {
        let fs = FeatureSet::new(
            self.category_levels,
            self.sections,
            self.keywords,
            self.pseudo_queries,
            self.extractor_model,
        )?;
        Ok((self.doc_id, fs))
    }
}

/// doc_id-keyed feature sets, optionally persisted as a JSONL sidecar that
/// is appended to as documents finish.
#[derive(Debug, Default)]
pub struct FeatureStore {
    sets: RwLock<HashMap<String, FeatureSet>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

fn store_err(path: &Path) -> impl Fn(std::io::Error) -> ExtractionError + '_ {
    move |e| ExtractionError::Store(format!("{}: {e}", path.display()))
}

impl FeatureStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads an existing sidecar (later records win) and keeps it open for
    /// appends.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ExtractionError> {
        let path = path.as_ref();
        let sets = if path.exists() {
            Self::read(path)?
        } else {
            HashMap::new()
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(store_err(path))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(store_err(path))?;
        Ok(FeatureStore {
            sets: RwLock::new(sets),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    /// Read-only load of a sidecar file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExtractionError> {
        Ok(FeatureStore {
            sets: RwLock::new(Self::read(path.as_ref())?),
            file: None,
            path: None,
        })
    }

    fn read(path: &Path) -> Result<HashMap<String, FeatureSet>, ExtractionError> {
        let reader = BufReader::new(File::open(path).map_err(store_err(path))?);
        let mut sets = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(store_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FeatureRecord = serde_json::from_str(&line).map_err(|e| {
                ExtractionError::Store(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            let (id, fs) = rec.into_feature_set()?;
            sets.insert(id, fs);
        }
        Ok(sets)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.sets.read().unwrap().contains_key(doc_id)
    }

    pub fn get(&self, doc_id: &str) -> Option<FeatureSet> {
        self.sets.read().unwrap().get(doc_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sets.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshot of all feature sets.
    pub fn to_map(&self) -> HashMap<String, FeatureSet> {
        self.sets.read().unwrap().clone()
    }

    pub fn insert(&self, doc_id: &str, fs: FeatureSet) -> Result<(), ExtractionError> {
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(&FeatureRecord::new(doc_id, &fs))
                .map_err(|e| ExtractionError::Store(e.to_string()))?;
            line.push('\n');
            let mut f = file.lock().unwrap();
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| ExtractionError::Store(e.to_string()))?;
        }
        self.sets.write().unwrap().insert(doc_id.to_string(), fs);
        Ok(())
    }

    /// Rewrites the sidecar with one record per document, ordered as in
    /// `order` (ids not listed follow in lexicographic order).
    pub fn compact(&self, order: &[&str]) -> Result<(), ExtractionError> {
        let (Some(path), Some(file)) = (&self.path, &self.file) else {
            return Ok(());
        };
        let _guard = file.lock().unwrap();
        let sets = self.sets.read().unwrap();
        let mut ids: Vec<&str> = order.iter().copied().filter(|d| sets.contains_key(*d)).collect();
        let listed: std::collections::HashSet<&str> = ids.iter().copied().collect();
        let mut rest: Vec<&str> = sets
            .keys()
            .map(String::as_str)
            .filter(|d| !listed.contains(d))
            .collect();
        rest.sort_unstable();
        ids.extend(rest);
        let mut body = String::new();
        for id in ids {
            body.push_str(
                &serde_json::to_string(&FeatureRecord::new(id, &sets[id]))
                    .map_err(|e| ExtractionError::Store(e.to_string()))?,
            );
            body.push('\n');
        }
        write_atomic(path, body.as_bytes()).map_err(store_err(path))?;
        Ok(())
    }
}
