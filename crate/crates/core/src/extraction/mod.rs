//! Offline zero-shot extraction of document features: a three-level category
//! path, section headings, keywords and pseudo queries.

mod parse;
mod store;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::eval::TokenLedger;
use crate::llm::{ChatBackend, LlmError, EXTRACTION_MAX_OUTPUT_TOKENS};
use crate::prompts::ExtractionPrompt;

pub use parse::{
    normalize_list, parse_category, parse_keywords, parse_pseudo_queries, parse_sections, Parsed,
};
pub use store::{FeatureRecord, FeatureStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    Category,
    Sections,
    Keywords,
    PseudoQueries,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Category,
        Feature::Sections,
        Feature::Keywords,
        Feature::PseudoQueries,
    ];

    pub fn name(self) -> &'static str {
        self.prompt().name()
    }

    pub fn prompt(self) -> ExtractionPrompt {
        match self {
            Feature::Category => ExtractionPrompt::Category,
            Feature::Sections => ExtractionPrompt::Sections,
            Feature::Keywords => ExtractionPrompt::Keywords,
            Feature::PseudoQueries => ExtractionPrompt::PseudoQueries,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("could not parse {feature}: {message}; raw response: {raw:?}")]
    Parse {
        feature: Feature,
        message: String,
        raw: String,
    },
    #[error("{feature} request failed: {source}")]
    Backend {
        feature: Feature,
        #[source]
        source: LlmError,
    },
    #[error("document {0} has empty text")]
    EmptyDocument(String),
    #[error("invalid feature set: {0}")]
    Invalid(String),
    #[error("feature store: {0}")]
    Store(String),
}

/// Broad field -> specific field -> title-like topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryPath([String; 3]);

impl CategoryPath {
    pub fn new(levels: [String; 3]) -> Result<Self, ExtractionError> {
        let levels = levels.map(|l| l.trim().to_string());
        if levels.iter().any(String::is_empty) {
            return Err(ExtractionError::Invalid("empty category level".into()));
        }
        Ok(CategoryPath(levels))
    }

    pub fn levels(&self) -> &[String; 3] {
        &self.0
    }

    /// `L1 -> L2 -> L3`
    pub fn arrow_joined(&self) -> String {
        self.0.join(" -> ")
    }
}

impl TryFrom<Vec<String>> for CategoryPath {
    type Error = String;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        let arr: [String; 3] = v
            .try_into()
            .map_err(|v: Vec<String>| format!("expected 3 category levels, found {}", v.len()))?;
        CategoryPath::new(arr).map_err(|e| e.to_string())
    }
}

impl From<CategoryPath> for Vec<String> {
    fn from(c: CategoryPath) -> Self {
        c.0.into()
    }
}

/// Extracted semantics of one document. All lists are trimmed, non-empty and
/// case-insensitively deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    pub category: CategoryPath,
    sections: Vec<String>,
    keywords: Vec<String>,
    pseudo_queries: Vec<String>,
    pub extractor_model: String,
}

impl FeatureSet {
    pub fn new(
        category: CategoryPath,
        sections: Vec<String>,
        keywords: Vec<String>,
        pseudo_queries: Vec<String>,
        extractor_model: impl Into<String>,
    ) -> Result<Self, ExtractionError> {
        let check = |name: &str, v: Vec<String>| {
            let v = normalize_list(v);
            if v.is_empty() {
                Err(ExtractionError::Invalid(format!("{name} list is empty")))
            } else {
                Ok(v)
            }
        };
        Ok(FeatureSet {
            category,
            sections: check("sections", sections)?,
            keywords: check("keywords", keywords)?,
            pseudo_queries: check("pseudo_queries", pseudo_queries)?,
            extractor_model: extractor_model.into(),
        })
    }

    pub fn sections(&self) -> &[String] {
        &self.sections
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn pseudo_queries(&self) -> &[String] {
        &self.pseudo_queries
    }
}

fn ask(
    doc: &Document,
    backend: &dyn ChatBackend,
    feature: Feature,
    ledger: &mut TokenLedger,
) -> Result<String, ExtractionError> {
    if doc.text().trim().is_empty() {
        return Err(ExtractionError::EmptyDocument(doc.doc_id.clone()));
    }
    let req = backend
        .request(feature.prompt().render(doc.text()))
        .with_max_output_tokens(EXTRACTION_MAX_OUTPUT_TOKENS);
    let resp = backend
        .complete(&req)
        .map_err(|source| ExtractionError::Backend { feature, source })?;
    ledger.record(
        &format!("extract:{}", feature.name()),
        resp.prompt_tokens,
        resp.completion_tokens,
    );
    Ok(resp.text)
}

fn log_warnings(doc: &Document, warnings: &[String]) {
    for w in warnings {
        tracing::warn!(doc_id = %doc.doc_id, "{w}");
    }
}

pub fn extract_category(doc: &Document, backend: &dyn ChatBackend) -> Result<CategoryPath, ExtractionError> {
    parse_category(&ask(doc, backend, Feature::Category, &mut TokenLedger::default())?)
}

pub fn extract_sections(doc: &Document, backend: &dyn ChatBackend) -> Result<Vec<String>, ExtractionError> {
    let p = parse_sections(&ask(doc, backend, Feature::Sections, &mut TokenLedger::default())?)?;
    log_warnings(doc, &p.warnings);
    Ok(p.value)
}

pub fn extract_keywords(doc: &Document, backend: &dyn ChatBackend) -> Result<Vec<String>, ExtractionError> {
    let p = parse_keywords(&ask(doc, backend, Feature::Keywords, &mut TokenLedger::default())?)?;
    log_warnings(doc, &p.warnings);
    Ok(p.value)
}

pub fn extract_pseudo_queries(
    doc: &Document,
    backend: &dyn ChatBackend,
) -> Result<Vec<String>, ExtractionError> {
    let p = parse_pseudo_queries(&ask(
        doc,
        backend,
        Feature::PseudoQueries,
        &mut TokenLedger::default(),
    )?)?;
    log_warnings(doc, &p.warnings);
    Ok(p.value)
}

/// Result of extracting one document: every feature is attempted even when
/// an earlier one fails.
#[derive(Debug)]
pub struct DocumentExtraction {
    pub doc_id: String,
    pub result: Result<FeatureSet, Vec<ExtractionError>>,
    pub succeeded: Vec<Feature>,
    pub warnings: Vec<String>,
    pub tokens: TokenLedger,
}

pub fn extract_document(doc: &Document, backend: &dyn ChatBackend) -> DocumentExtraction {
    let mut tokens = TokenLedger::default();
    let mut warnings = Vec::new();
    let mut errors = Vec::new();
    let mut succeeded = Vec::new();

    if doc.text().trim().is_empty() {
        return DocumentExtraction {
            doc_id: doc.doc_id.clone(),
            result: Err(vec![ExtractionError::EmptyDocument(doc.doc_id.clone())]),
            succeeded,
            warnings,
            tokens,
        };
    }

    let mut category = None;
    let mut lists: BTreeMap<Feature, Vec<String>> = BTreeMap::new();
    for feature in Feature::ALL {
        let outcome = ask(doc, backend, feature, &mut tokens).and_then(|raw| match feature {
            Feature::Category => parse_category(&raw).map(|c| {
                category = Some(c);
            }),
            Feature::Sections | Feature::Keywords | Feature::PseudoQueries => {
                let parsed = match feature {
                    Feature::Sections => parse_sections(&raw),
                    Feature::Keywords => parse_keywords(&raw),
                    _ => parse_pseudo_queries(&raw),
                }?;
                warnings.extend(parsed.warnings);
                lists.insert(feature, parsed.value);
                Ok(())
            }
        });
        match outcome {
            Ok(()) => succeeded.push(feature),
            Err(e) => errors.push(e),
        }
    }

    let result = match (category, errors.is_empty()) {
        (Some(category), true) => FeatureSet::new(
            category,
            lists.remove(&Feature::Sections).unwrap_or_default(),
            lists.remove(&Feature::Keywords).unwrap_or_default(),
            lists.remove(&Feature::PseudoQueries).unwrap_or_default(),
            backend.model_name(),
        )
        .map_err(|e| vec![e]),
        _ => Err(errors),
    };
    DocumentExtraction {
        doc_id: doc.doc_id.clone(),
        result,
        succeeded,
        warnings,
        tokens,
    }
}

#[derive(Debug)]
pub struct ExtractionFailure {
    pub doc_id: String,
    pub errors: Vec<ExtractionError>,
}

#[derive(Debug, Default)]
pub struct ExtractionReport {
    pub extracted: usize,
    pub skipped: usize,
    pub failures: Vec<ExtractionFailure>,
    /// Documents for which each feature parsed successfully in this run.
    pub feature_successes: BTreeMap<Feature, usize>,
    pub warnings: Vec<String>,
    pub tokens: TokenLedger,
}

/// Extracts features for every document not yet in `store`, up to
/// `parallelism` documents at a time. Successes are persisted as they
/// finish; failures are collected and returned.
pub fn extract_all(
    corpus: &Corpus,
    backend: &dyn ChatBackend,
    store: &FeatureStore,
    parallelism: usize,
) -> Result<ExtractionReport, ExtractionError> {
    let pending: Vec<&Document> = corpus
        .iter()
        .filter(|d| !store.contains(&d.doc_id))
        .collect();
    let mut report = ExtractionReport {
        skipped: corpus.len() - pending.len(),
        ..Default::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| ExtractionError::Store(e.to_string()))?;
    let outcomes: Vec<Result<DocumentExtraction, ExtractionError>> = pool.install(|| {
        pending
            .par_iter()
            .map(|doc| {
                let out = extract_document(doc, backend);
                if let Ok(fs) = &out.result {
                    store.insert(&out.doc_id, fs.clone())?;
                }
                Ok(out)
            })
            .collect()
    });

    for out in outcomes {
        let out = out?;
        for f in &out.succeeded {
            *report.feature_successes.entry(*f).or_default() += 1;
        }
        report
            .warnings
            .extend(out.warnings.iter().map(|w| format!("{}: {w}", out.doc_id)));
        report.tokens.merge(&out.tokens);
        match out.result {
            Ok(_) => report.extracted += 1,
            Err(errors) => report.failures.push(ExtractionFailure {
                doc_id: out.doc_id,
                errors,
            }),
        }
    }
    let order: Vec<&str> = corpus.iter().map(|d| d.doc_id.as_str()).collect();
    store.compact(&order)?;
    Ok(report)
}
