//! First-stage retrieval: a BM25 inverted index and brute-force dense
//! scoring, both producing [`CandidateList`]s.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{write_atomic, CandidateList, Corpus, CorpusError, Document, Query};
use crate::embedding::{cosine, Embedder, EmbeddingError, EmbeddingVector};
use crate::text::word_tokens;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("m must be at least 1")]
    ZeroDepth,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("index file {path}: {message}")]
    Persist { path: String, message: String },
    #[error("index does not match corpus: {0}")]
    Stale(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

type Result<T> = std::result::Result<T, RetrievalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// The text a document is indexed and embedded by.
pub fn document_text(doc: &Document) -> String {
    format!("{} {}", doc.title, doc.text()).trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    /// term -> (doc_index, term frequency), ascending doc_index.
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
    pub doc_lengths: Vec<u32>,
    pub avg_doc_length: f64,
    pub doc_count: usize,
    pub doc_ids: Vec<String>,
}

pub fn build_index(corpus: &Corpus) -> Result<InvertedIndex> {
    if corpus.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    for (i, doc) in corpus.iter().enumerate() {
        let tokens = word_tokens(&document_text(doc));
        doc_lengths.push(tokens.len() as u32);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (term, n) in tf {
            postings.entry(term).or_default().push((i as u32, n));
        }
    }
    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    Ok(InvertedIndex {
        postings,
        avg_doc_length: total as f64 / corpus.len() as f64,
        doc_count: corpus.len(),
        doc_lengths,
        doc_ids: corpus.iter().map(|d| d.doc_id.clone()).collect(),
    })
}

impl InvertedIndex {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let persist = |message: String| RetrievalError::Persist {
            path: path.display().to_string(),
            message,
        };
        let bytes = bincode::serialize(self).map_err(|e| persist(e.to_string()))?;
        write_atomic(path, &bytes).map_err(|e| persist(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let persist = |message: String| RetrievalError::Persist {
            path: path.display().to_string(),
            message,
        };
        let bytes = std::fs::read(path).map_err(|e| persist(e.to_string()))?;
        bincode::deserialize(&bytes).map_err(|e| persist(e.to_string()))
    }

    /// Loads `path` when it was built from this corpus, otherwise builds
    /// and saves a fresh index.
    pub fn load_or_build(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            match Self::load(path).and_then(|idx| idx.check(corpus).map(|_| idx)) {
                Ok(idx) => return Ok(idx),
                Err(e) => tracing::warn!("rebuilding index: {e}"),
            }
        }
        let idx = build_index(corpus)?;
        idx.save(path)?;
        Ok(idx)
    }

    fn check(&self, corpus: &Corpus) -> Result<()> {
        let same = self.doc_count == corpus.len()
            && self.doc_ids.iter().zip(corpus.iter()).all(|(a, d)| *a == d.doc_id);
        if same {
            Ok(())
        } else {
            Err(RetrievalError::Stale("document ids differ".into()))
        }
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

fn top_m(query_id: &str, mut scored: Vec<(String, f64)>, m: usize) -> Result<CandidateList> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(m);
    Ok(CandidateList::new(query_id, scored)?)
}

pub fn bm25_search(index: &InvertedIndex, query: &Query, m: usize) -> Result<CandidateList> {
    bm25_search_with(index, query, m, Bm25Params::default())
}

/// Top-`m` documents by BM25. Repeated query terms count once; documents
/// sharing no term with the query are not returned.
pub fn bm25_search_with(
    index: &InvertedIndex,
    query: &Query,
    m: usize,
    params: Bm25Params,
) -> Result<CandidateList> {
    if m == 0 {
        return Err(RetrievalError::ZeroDepth);
    }
    let mut seen = HashSet::new();
    let mut scores: HashMap<u32, f64> = HashMap::new();
    for term in word_tokens(&query.text) {
        if !seen.insert(term.clone()) {
            continue;
        }
        let Some(list) = index.postings.get(&term) else {
            continue;
        };
        let idf = index.idf(list.len());
        for &(doc, tf) in list {
            let tf = tf as f64;
            let len = index.doc_lengths[doc as usize] as f64;
            let norm = if index.avg_doc_length > 0.0 {
                1.0 - params.b + params.b * len / index.avg_doc_length
            } else {
                1.0
            };
            *scores.entry(doc).or_default() += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm);
        }
    }
    let scored = scores
        .into_iter()
        .map(|(d, s)| (index.doc_ids[d as usize].clone(), s))
        .collect();
    top_m(&query.query_id, scored, m)
}

/// Document embeddings computed once for repeated dense searches.
pub struct DenseIndex {
    doc_ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
}

impl DenseIndex {
    /// Documents whose title and text are both empty are left out.
    pub fn build(corpus: &Corpus, embedder: &dyn Embedder) -> Result<Self> {
        let (doc_ids, texts): (Vec<String>, Vec<String>) = corpus
            .iter()
            .map(|d| (d.doc_id.clone(), document_text(d)))
            .filter(|(_, t)| !t.is_empty())
            .unzip();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = embedder.embed_batch(&refs)?;
        Ok(DenseIndex { doc_ids, vectors })
    }

    pub fn search(&self, embedder: &dyn Embedder, query: &Query, m: usize) -> Result<CandidateList> {
        if m == 0 {
            return Err(RetrievalError::ZeroDepth);
        }
        if self.doc_ids.is_empty() {
            return Ok(CandidateList::new(&query.query_id, Vec::new())?);
        }
        let q = embedder.embed(&query.text)?;
        let scored = self
            .doc_ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| Ok((id.clone(), cosine(&q, v)?)))
            .collect::<Result<Vec<_>>>()?;
        top_m(&query.query_id, scored, m)
    }
}

pub fn dense_search(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    query: &Query,
    m: usize,
) -> Result<CandidateList> {
    DenseIndex::build(corpus, embedder)?.search(embedder, query, m)
}

/// Runs `search` over all queries on `threads` workers, keeping query order.
pub fn search_all<F>(queries: &[Query], threads: usize, search: F) -> Result<Vec<CandidateList>>
where
    F: Fn(&Query) -> Result<CandidateList> + Send + Sync,
{
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| RetrievalError::Pool(e.to_string()))?
        .install(|| queries.par_iter().map(&search).collect())
}
