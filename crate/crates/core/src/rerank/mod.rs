//! Listwise reranking: single-window, sliding-window and the two-stage
//! coarse-to-fine pipeline over compact representations.

mod listwise;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidateList, Corpus, Query, RunResult};
use crate::embedding::{adaptive_select_embedded, Embedder, EmbeddingError, SelectedFeatures};
use crate::eval::TokenLedger;
use crate::extraction::FeatureSet;
use crate::llm::{ChatBackend, LlmError};
use crate::representation::{build_representation, Form, RepresentationError};
use crate::retrieval::document_text;

pub use listwise::{
    build_listwise_prompt, listwise_rerank, parse_ranking, sliding_window_rerank, window_starts,
    Permutation,
};

pub const STAGE_RERANK: &str = "rerank";
pub const STAGE_COARSE: &str = "coarse";
pub const STAGE_FINE: &str = "fine";

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("nothing to rerank")]
    EmptyInput,
    #[error("no valid passage id in ranking response {raw:?}")]
    Parse { raw: String },
    #[error("not a permutation: {0:?}")]
    InvalidPermutation(Vec<usize>),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("no features extracted for document {0}")]
    MissingFeatures(String),
    #[error("candidate {0} is not in the corpus")]
    MissingDocument(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Representation(#[from] RepresentationError),
    #[error("invalid rerank config: {0}")]
    InvalidConfig(String),
    #[error("query {query_id}, {stage} stage: {source}")]
    Stage {
        query_id: String,
        stage: &'static str,
        #[source]
        source: Box<RerankError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Vanilla,
    Sliding,
    #[default]
    #[serde(rename = "corank")]
    CoRank,
    /// Coarse stage over compact representations with sliding windows.
    #[serde(rename = "corank-sliding")]
    CoRankSliding,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Vanilla,
        Strategy::Sliding,
        Strategy::CoRank,
        Strategy::CoRankSliding,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Vanilla => "vanilla",
            Strategy::Sliding => "sliding",
            Strategy::CoRank => "corank",
            Strategy::CoRankSliding => "corank-sliding",
        }
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Strategy::CoRank | Strategy::CoRankSliding)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.tag() == s)
            .ok_or_else(|| format!("unknown strategy {s:?} (vanilla, sliding, corank, corank-sliding)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    pub strategy: Strategy,
    pub vanilla_m: usize,
    pub sliding_total: usize,
    pub window: usize,
    pub step: usize,
    pub coarse_m: usize,
    pub fine_k: usize,
    pub form: Form,
    pub k_keywords: usize,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            strategy: Strategy::CoRank,
            vanilla_m: 20,
            sliding_total: 100,
            window: 20,
            step: 10,
            coarse_m: 200,
            fine_k: 20,
            form: Form::CategorySectionKeywords,
            k_keywords: 5,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        let bad = |m: String| Err(RerankError::InvalidConfig(m));
        if self.vanilla_m == 0 || self.coarse_m == 0 || self.fine_k == 0 {
            return bad("vanilla_m, coarse_m and fine_k must be positive".into());
        }
        if !(1 <= self.step && self.step <= self.window && self.window <= self.sliding_total) {
            return bad(format!(
                "need 1 <= step ({}) <= window ({}) <= sliding_total ({})",
                self.step, self.window, self.sliding_total
            ));
        }
        if self.fine_k > self.coarse_m {
            return bad(format!("fine_k ({}) exceeds coarse_m ({})", self.fine_k, self.coarse_m));
        }
        Ok(())
    }

    /// Candidates a strategy looks at.
    pub fn depth(&self) -> usize {
        match self.strategy {
            Strategy::Vanilla => self.vanilla_m,
            Strategy::Sliding => self.sliding_total,
            Strategy::CoRank | Strategy::CoRankSliding => self.coarse_m,
        }
    }
}

/// Everything a strategy needs besides the query and its candidates.
pub struct RerankContext<'a> {
    pub corpus: &'a Corpus,
    pub backend: &'a dyn ChatBackend,
    pub config: &'a RerankConfig,
    /// Required by the two-stage strategies only.
    pub features: Option<&'a HashMap<String, FeatureSet>>,
    pub embedder: Option<&'a dyn Embedder>,
}

fn in_stage<T>(query_id: &str, stage: &'static str, r: Result<T, RerankError>) -> Result<T, RerankError> {
    r.map_err(|e| RerankError::Stage {
        query_id: query_id.to_string(),
        stage,
        source: Box::new(e),
    })
}

impl RerankContext<'_> {
    fn full_text_items(&self, ids: &[String]) -> Result<Vec<(String, String)>, RerankError> {
        ids.iter()
            .map(|id| {
                let doc = self
                    .corpus
                    .get(id)
                    .ok_or_else(|| RerankError::MissingDocument(id.clone()))?;
                Ok((id.clone(), document_text(doc)))
            })
            .collect()
    }

    fn window_over(
        &self,
        query: &Query,
        ids: &[String],
        sliding: bool,
        ledger: &mut TokenLedger,
    ) -> Result<Vec<String>, RerankError> {
        let items = self.full_text_items(ids)?;
        let cfg = self.config;
        let r = if sliding {
            sliding_window_rerank(&query.text, &items, cfg.window, cfg.step, self.backend, ledger, STAGE_RERANK)
        } else {
            listwise_rerank(&query.text, &items, self.backend, ledger, STAGE_RERANK)
        };
        in_stage(&query.query_id, STAGE_RERANK, r)
    }

    /// Compact representations of `ids` for this query, in `ids` order.
    pub fn representations(&self, query: &Query, ids: &[String]) -> Result<Vec<(String, String)>, RerankError> {
        let (Some(features), Some(embedder)) = (self.features, self.embedder) else {
            return Err(RerankError::InvalidConfig(
                "two-stage reranking needs features and an embedder".into(),
            ));
        };
        let q = embedder.embed(&query.text)?;
        ids.iter()
            .map(|id| {
                let fs = features
                    .get(id)
                    .ok_or_else(|| RerankError::MissingFeatures(id.clone()))?;
                let selected: SelectedFeatures =
                    adaptive_select_embedded(embedder, &q, fs, self.config.k_keywords)?;
                let rep = build_representation(id, self.config.form, &fs.category, &selected)?;
                Ok((id.clone(), rep.text))
            })
            .collect()
    }

    fn two_stage(
        &self,
        query: &Query,
        ids: &[String],
        sliding: bool,
        ledger: &mut TokenLedger,
    ) -> Result<Vec<String>, RerankError> {
        let cfg = self.config;
        let reps = in_stage(&query.query_id, STAGE_COARSE, self.representations(query, ids))?;
        let coarse = if sliding {
            sliding_window_rerank(&query.text, &reps, cfg.window, cfg.step, self.backend, ledger, STAGE_COARSE)
        } else {
            listwise_rerank(&query.text, &reps, self.backend, ledger, STAGE_COARSE)
        };
        let coarse = in_stage(&query.query_id, STAGE_COARSE, coarse)?;

        let k = cfg.fine_k.min(coarse.len());
        let seed = in_stage(&query.query_id, STAGE_FINE, self.full_text_items(&coarse[..k]))?;
        let fine = in_stage(
            &query.query_id,
            STAGE_FINE,
            listwise_rerank(&query.text, &seed, self.backend, ledger, STAGE_FINE),
        )?;
        Ok(fine.into_iter().chain(coarse[k..].iter().cloned()).collect())
    }

    /// Reranks one query's candidates. The result always holds every
    /// candidate: whatever lies beyond the strategy's depth follows in
    /// first-stage order.
    pub fn rerank(&self, query: &Query, candidates: &CandidateList) -> Result<RunResult, RerankError> {
        let cfg = self.config;
        let ids = candidates.doc_ids();
        let mut ledger = TokenLedger::default();
        let depth = cfg.depth().min(ids.len());
        let (head, tail) = ids.split_at(depth);
        let mut ranking = if head.is_empty() {
            Vec::new()
        } else {
            match cfg.strategy {
                Strategy::Vanilla => self.window_over(query, head, false, &mut ledger)?,
                Strategy::Sliding => self.window_over(query, head, true, &mut ledger)?,
                Strategy::CoRank => self.two_stage(query, head, false, &mut ledger)?,
                Strategy::CoRankSliding => self.two_stage(query, head, true, &mut ledger)?,
            }
        };
        ranking.extend(tail.iter().cloned());
        Ok(RunResult {
            query_id: query.query_id.clone(),
            ranking,
            strategy_tag: cfg.strategy.tag().to_string(),
            token_usage: ledger,
        })
    }

    /// Reranks all queries with up to `parallelism` in flight, keeping
    /// query order. `candidates[i]` belongs to `queries[i]`.
    pub fn rerank_all(
        &self,
        queries: &[Query],
        candidates: &[CandidateList],
        parallelism: usize,
    ) -> Result<Vec<RunResult>, RerankError> {
        if queries.len() != candidates.len() {
            return Err(RerankError::InvalidConfig(format!(
                "{} queries but {} candidate lists",
                queries.len(),
                candidates.len()
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism.max(1))
            .build()
            .map_err(|e| RerankError::InvalidConfig(e.to_string()))?;
        pool.install(|| {
            queries
                .par_iter()
                .zip(candidates.par_iter())
                .map(|(q, c)| self.rerank(q, c))
                .collect()
        })
    }
}
