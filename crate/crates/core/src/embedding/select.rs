use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{cosine, Embedder, EmbeddingError, EmbeddingVector};
use crate::extraction::FeatureSet;

/// Per-query choice of feature elements for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeatures {
    /// Most similar first.
    pub keywords: Vec<String>,
    pub section: String,
    pub pseudo_query: String,
    /// Parallel to `keywords`; empty when chosen without similarity.
    pub similarity_scores: Vec<f64>,
}

impl SelectedFeatures {
    /// Query-independent choice: the first `k` keywords, first section and
    /// first pseudo query in extraction order.
    pub fn leading(fs: &FeatureSet, k: usize) -> Self {
        SelectedFeatures {
            keywords: fs.keywords().iter().take(k).cloned().collect(),
            section: fs.sections()[0].clone(),
            pseudo_query: fs.pseudo_queries()[0].clone(),
            similarity_scores: Vec::new(),
        }
    }
}

/// Indices of `items` ordered by cosine to `query`, descending; exact ties
/// keep list order.
fn rank(
    embedder: &dyn Embedder,
    query: &EmbeddingVector,
    items: &[String],
) -> Result<Vec<(usize, f64)>, EmbeddingError> {
    let texts: Vec<&str> = items.iter().map(String::as_str).collect();
    let vecs = embedder.embed_batch(&texts)?;
    let mut scored = vecs
        .iter()
        .enumerate()
        .map(|(i, v)| Ok((i, cosine(query, v)?)))
        .collect::<Result<Vec<_>, EmbeddingError>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
    Ok(scored)
}

/// Picks the `k_keywords` keywords, the section and the pseudo query most
/// similar to the query. Lists shorter than the quota are taken whole.
pub fn adaptive_select(
    embedder: &dyn Embedder,
    query: &str,
    fs: &FeatureSet,
    k_keywords: usize,
) -> Result<SelectedFeatures, EmbeddingError> {
    let q = embedder.embed(query)?;
    adaptive_select_embedded(embedder, &q, fs, k_keywords)
}

/// As [`adaptive_select`], with the query already embedded.
pub fn adaptive_select_embedded(
    embedder: &dyn Embedder,
    query: &EmbeddingVector,
    fs: &FeatureSet,
    k_keywords: usize,
) -> Result<SelectedFeatures, EmbeddingError> {
    let (keywords, similarity_scores) = if k_keywords == 0 {
        (Vec::new(), Vec::new())
    } else {
        rank(embedder, query, fs.keywords())?
            .into_iter()
            .take(k_keywords)
            .map(|(i, s)| (fs.keywords()[i].clone(), s))
            .unzip()
    };
    let section = rank(embedder, query, fs.sections())?[0].0;
    let pseudo = rank(embedder, query, fs.pseudo_queries())?[0].0;
    Ok(SelectedFeatures {
        keywords,
        section: fs.sections()[section].clone(),
        pseudo_query: fs.pseudo_queries()[pseudo].clone(),
        similarity_scores,
    })
}
