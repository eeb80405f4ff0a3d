//! Documents, queries, relevance judgments, candidate lists and run files.
//!
//! File formats:
//! - corpus and queries: one JSON object per line (`doc_id`, `title`, `text` /
//!   `query_id`, `text`)
//! - qrels: `query_id 0 doc_id grade`, whitespace separated
//! - runs: `query_id Q0 doc_id rank score tag`, plus an optional
//!   `<run>.tokens.jsonl` sidecar carrying the per-query token ledger

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::TokenLedger;
use crate::text::count_tokens;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate doc_id {0:?}")]
    DuplicateDoc(String),
    #[error("duplicate query_id {0:?}")]
    DuplicateQuery(String),
    #[error("query {query_id}: {message}")]
    InvalidRun { query_id: String, message: String },
    #[error("candidate list for {query_id}: {message}")]
    InvalidCandidates { query_id: String, message: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A corpus item. `text` is the full content the reranker sees.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "DocumentRecord", into = "DocumentRecord")]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    text: String,
    token_estimate: OnceLock<usize>,
}

#[derive(Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    #[serde(default)]
    title: String,
    text: String,
}

impl From<DocumentRecord> for Document {
    fn from(r: DocumentRecord) -> Self {
        Document::new(r.doc_id, r.title, r.text)
    }
}

impl From<Document> for DocumentRecord {
    fn from(d: Document) -> Self {
        DocumentRecord {
            doc_id: d.doc_id,
            title: d.title,
            text: d.text,
        }
    }
}

impl PartialEq for Document {
    fn eq(&self, other: &Self) -> bool {
        self.doc_id == other.doc_id && self.title == other.title && self.text == other.text
    }
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
            token_estimate: OnceLock::new(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Replaces the text and drops the cached token estimate.
    pub fn set_text(&mut self, text: impl Into<String>) {
        self.text = text.into();
        self.token_estimate = OnceLock::new();
    }

    /// Heuristic token count of `text`, computed on first use.
    pub fn token_estimate(&self) -> usize {
        *self.token_estimate.get_or_init(|| count_tokens(&self.text))
    }
}

/// An immutable, id-indexed collection of documents.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if d.doc_id.is_empty() {
                return Err(CorpusError::Malformed {
                    line: i + 1,
                    message: "empty doc_id".into(),
                });
            }
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateDoc(d.doc_id.clone()));
            }
        }
        Ok(Corpus { docs, by_id })
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn index_of(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.docs.iter()
    }
}

/// Non-blank lines with their 1-based line numbers.
fn numbered_lines(reader: impl BufRead, path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in numbered_lines(reader, Path::new("<corpus>"))? {
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if doc.doc_id.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: "empty doc_id".into(),
            });
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateDoc(doc.doc_id));
        }
        docs.push(doc);
    }
    Corpus::from_documents(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_corpus(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

pub fn parse_queries(reader: impl BufRead) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in numbered_lines(reader, Path::new("<queries>"))? {
        let q: Query = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if q.text.trim().is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: format!("query {} has empty text", q.query_id),
            });
        }
        if !seen.insert(q.query_id.clone()) {
            return Err(CorpusError::DuplicateQuery(q.query_id));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_queries(BufReader::new(file))
}

/// Relevance grades per query, keyed by doc_id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Option<u32> {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    /// All judgments for one query, `None` if the query was never judged.
    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parses TREC qrels. Returns the judgments and any override warnings.
pub fn parse_qrels(reader: impl BufRead) -> Result<(Qrels, Vec<String>)> {
    let mut qrels = Qrels::default();
    let mut warnings = Vec::new();
    for (line_no, line) in numbered_lines(reader, Path::new("<qrels>"))? {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let grade: i64 = fields[3].parse().map_err(|_| CorpusError::Malformed {
            line: line_no,
            message: format!("grade {:?} is not an integer", fields[3]),
        })?;
        if grade < 0 {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: format!("negative grade {grade}"),
            });
        }
        let grade = u32::try_from(grade).map_err(|_| CorpusError::Malformed {
            line: line_no,
            message: format!("grade {grade} out of range"),
        })?;
        if let Some(prev) = qrels.insert(fields[0], fields[2], grade) {
            warnings.push(format!(
                "line {line_no}: ({}, {}) judged again, grade {prev} replaced by {grade}",
                fields[0], fields[2]
            ));
        }
    }
    Ok((qrels, warnings))
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let (qrels, warnings) = parse_qrels(BufReader::new(file))?;
    for w in warnings {
        tracing::warn!("{}: {}", path.display(), w);
    }
    Ok(qrels)
}

/// First-stage output for one query, sorted by score descending with ties
/// broken by doc_id ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateList {
    pub query_id: String,
    entries: Vec<(String, f64)>,
}

impl CandidateList {
    pub fn new(query_id: impl Into<String>, mut entries: Vec<(String, f64)>) -> Result<Self> {
        let query_id = query_id.into();
        if let Some((d, _)) = entries.iter().find(|(_, s)| s.is_nan()) {
            return Err(CorpusError::InvalidCandidates {
                query_id,
                message: format!("NaN score for {d}"),
            });
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut seen = HashSet::with_capacity(entries.len());
        for (d, _) in &entries {
            if !seen.insert(d.as_str()) {
                return Err(CorpusError::InvalidCandidates {
                    query_id,
                    message: format!("duplicate doc_id {d}"),
                });
            }
        }
        Ok(CandidateList { query_id, entries })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.entries.iter().map(|(d, _)| d.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A reranked list for one query.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunResult {
    pub query_id: String,
    pub ranking: Vec<String>,
    pub strategy_tag: String,
    pub token_usage: TokenLedger,
}

/// Path of the token-ledger sidecar that accompanies a run file.
pub fn ledger_sidecar_path(run_path: &Path) -> PathBuf {
    let mut name = run_path.file_name().unwrap_or_default().to_os_string();
    name.push(".tokens.jsonl");
    run_path.with_file_name(name)
}

#[derive(Serialize, Deserialize)]
struct LedgerRecord {
    query_id: String,
    #[serde(flatten)]
    ledger: TokenLedger,
}

fn check_field(query_id: &str, what: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.chars().any(char::is_whitespace) {
        return Err(CorpusError::InvalidRun {
            query_id: query_id.to_string(),
            message: format!("{what} {value:?} is empty or contains whitespace"),
        });
    }
    Ok(())
}

/// Renders runs in TREC format. Scores count down from the list length so
/// that sorting by score reproduces the rank order.
pub fn render_run(runs: &[RunResult]) -> Result<String> {
    let mut out = String::new();
    for run in runs {
        check_field(&run.query_id, "query_id", &run.query_id)?;
        check_field(&run.query_id, "tag", &run.strategy_tag)?;
        let n = run.ranking.len();
        for (i, doc) in run.ranking.iter().enumerate() {
            check_field(&run.query_id, "doc_id", doc)?;
            out.push_str(&format!(
                "{} Q0 {} {} {} {}\n",
                run.query_id,
                doc,
                i + 1,
                n - i,
                run.strategy_tag
            ));
        }
    }
    Ok(out)
}

pub fn render_ledgers(runs: &[RunResult]) -> String {
    let mut out = String::new();
    for run in runs {
        let rec = LedgerRecord {
            query_id: run.query_id.clone(),
            ledger: run.token_usage.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("ledger serializes"));
        out.push('\n');
    }
    out
}

/// Writes `contents` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut builder = tempfile::Builder::new();
    // Temp files default to 0600; outputs should be ordinary files.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Writes the run file and its token-ledger sidecar.
pub fn write_run(runs: &[RunResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = render_run(runs)?;
    write_atomic(path, body.as_bytes()).map_err(io_err(path))?;
    let sidecar = ledger_sidecar_path(path);
    write_atomic(&sidecar, render_ledgers(runs).as_bytes()).map_err(io_err(&sidecar))?;
    Ok(())
}

pub fn parse_run(reader: impl BufRead) -> Result<Vec<RunResult>> {
    // query_id -> (tag, [(rank, doc_id)]) in first-appearance order
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (String, Vec<(usize, String)>)> = HashMap::new();
    for (line_no, line) in numbered_lines(reader, Path::new("<run>"))? {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let rank: usize = f[3].parse().map_err(|_| CorpusError::Malformed {
            line: line_no,
            message: format!("rank {:?} is not a positive integer", f[3]),
        })?;
        f[4].parse::<f64>().map_err(|_| CorpusError::Malformed {
            line: line_no,
            message: format!("score {:?} is not a number", f[4]),
        })?;
        let entry = rows.entry(f[0].to_string()).or_insert_with(|| {
            order.push(f[0].to_string());
            (f[5].to_string(), Vec::new())
        });
        if entry.0 != f[5] {
            return Err(CorpusError::InvalidRun {
                query_id: f[0].to_string(),
                message: format!("mixed tags {:?} and {:?}", entry.0, f[5]),
            });
        }
        entry.1.push((rank, f[2].to_string()));
    }

    let mut runs = Vec::with_capacity(order.len());
    for qid in order {
        let (tag, mut ranked) = rows.remove(&qid).expect("query recorded");
        ranked.sort_by_key(|(r, _)| *r);
        let mut seen = HashSet::new();
        for (i, (rank, doc)) in ranked.iter().enumerate() {
            if *rank != i + 1 {
                return Err(CorpusError::InvalidRun {
                    query_id: qid,
                    message: format!("expected rank {}, found {rank} (gap or duplicate)", i + 1),
                });
            }
            if !seen.insert(doc.as_str()) {
                return Err(CorpusError::InvalidRun {
                    query_id: qid,
                    message: format!("doc_id {doc} ranked twice"),
                });
            }
        }
        runs.push(RunResult {
            query_id: qid,
            ranking: ranked.into_iter().map(|(_, d)| d).collect(),
            strategy_tag: tag,
            token_usage: TokenLedger::default(),
        });
    }
    Ok(runs)
}

/// Reads a run file, attaching token ledgers from the sidecar when present.
pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RunResult>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut runs = parse_run(BufReader::new(file))?;
    let sidecar = ledger_sidecar_path(path);
    if sidecar.exists() {
        let file = fs::File::open(&sidecar).map_err(io_err(&sidecar))?;
        let mut ledgers = HashMap::new();
        for (line_no, line) in numbered_lines(BufReader::new(file), &sidecar)? {
            let rec: LedgerRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: format!("{}: {e}", sidecar.display()),
                })?;
            ledgers.insert(rec.query_id, rec.ledger);
        }
        for run in &mut runs {
            if let Some(l) = ledgers.remove(&run.query_id) {
                run.token_usage = l;
            }
        }
    }
    Ok(runs)
}
