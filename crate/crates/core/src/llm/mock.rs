//! Deterministic offline backend.
//!
//! The heuristic mode answers every prompt this crate emits: listwise
//! reranking prompts are ranked by query/passage word overlap, extraction
//! prompts get a canned answer assembled from the document's own words.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};
use crate::prompts::{parse_listwise, ExtractionPrompt};
use crate::text::{count_tokens, word_tokens};

type ResponseFn = dyn Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync;

enum Behavior {
    Fixed(String),
    Scripted(Mutex<VecDeque<String>>),
    Func(Box<ResponseFn>),
    Heuristic,
}

pub struct MockBackend {
    model: String,
    behavior: Behavior,
    calls: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl MockBackend {
    fn with(model: impl Into<String>, behavior: Behavior) -> Self {
        MockBackend {
            model: model.into(),
            behavior,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Always answers `text`.
    pub fn fixed(model: impl Into<String>, text: impl Into<String>) -> Self {
        Self::with(model, Behavior::Fixed(text.into()))
    }

    /// Answers with `responses` in order; errors once they run out.
    pub fn scripted(model: impl Into<String>, responses: Vec<String>) -> Self {
        Self::with(model, Behavior::Scripted(Mutex::new(responses.into())))
    }

    pub fn from_fn(
        model: impl Into<String>,
        f: impl Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    ) -> Self {
        Self::with(model, Behavior::Func(Box::new(f)))
    }

    /// Overlap ranker for reranking prompts, document-derived answers for
    /// extraction prompts.
    pub fn heuristic(model: impl Into<String>) -> Self {
        Self::with(model, Behavior::Heuristic)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl ChatBackend for MockBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        req.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.prompts.lock().unwrap().push(req.prompt.clone());
        let text = match &self.behavior {
            Behavior::Fixed(t) => t.clone(),
            Behavior::Scripted(q) => q
                .lock()
                .unwrap()
                .pop_front()
                .ok_or_else(|| LlmError::Mock("script exhausted".into()))?,
            Behavior::Func(f) => f(req)?,
            Behavior::Heuristic => heuristic_response(&req.prompt)?,
        };
        Ok(ChatResponse {
            prompt_tokens: count_tokens(&req.prompt) as u64,
            completion_tokens: count_tokens(&text) as u64,
            text,
        })
    }
}

fn heuristic_response(prompt: &str) -> Result<String, LlmError> {
    if let Some((query, passages)) = parse_listwise(prompt) {
        return Ok(mock_rank_by_overlap(&query, &passages));
    }
    if let Some((kind, doc)) = ExtractionPrompt::recognize(prompt) {
        return Ok(heuristic_extraction_response(kind, doc));
    }
    Err(LlmError::Mock("unrecognized prompt".into()))
}

/// Ranks passages by the number of distinct lowercase word tokens they share
/// with the query; ties keep their original order.
pub fn mock_rank_by_overlap(query: &str, passages: &[impl AsRef<str>]) -> String {
    let q: HashSet<String> = word_tokens(query).into_iter().collect();
    let mut scored: Vec<(usize, usize)> = passages
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let p: HashSet<String> = word_tokens(p.as_ref()).into_iter().collect();
            (i, q.intersection(&p).count())
        })
        .collect();
    scored.sort_by_key(|&(_, overlap)| std::cmp::Reverse(overlap));
    scored
        .iter()
        .map(|(i, _)| format!("[{}]", i + 1))
        .collect::<Vec<_>>()
        .join(" > ")
}

const STOPWORDS: &[&str] = &[
    "about", "above", "across", "after", "again", "against", "all", "also", "among", "and", "any",
    "are", "as", "based", "been", "before", "being", "between", "both", "but", "can", "could",
    "does", "done", "each", "either", "for", "from", "further", "had", "has", "have", "having",
    "here", "how", "however", "into", "its", "itself", "may", "more", "most", "much", "not",
    "now", "off", "once", "one", "only", "other", "our", "ours", "out", "over", "own", "same",
    "several", "should", "show", "shows", "some", "such", "than", "that", "the", "their", "them",
    "then", "there", "these", "they", "this", "those", "through", "thus", "too", "two", "under",
    "until", "upon", "use", "used", "uses", "using", "very", "was", "we", "were", "what", "when",
    "where", "whether", "which", "while", "who", "whom", "why", "will", "with", "within",
    "without", "would", "you", "your", "yet", "via", "new", "well", "often", "many", "three",
];

fn is_content_word(w: &str) -> bool {
    w.chars().count() >= 3
        && !w.chars().all(|c| c.is_ascii_digit())
        && !STOPWORDS.contains(&w.to_lowercase().as_str())
}

/// Distinct content words in order of first appearance, original casing.
fn content_words(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| is_content_word(w))
        .filter(|w| seen.insert(w.to_lowercase()))
        .map(str::to_string)
        .collect()
}

fn title_case(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn split_title(doc: &str) -> (Option<&str>, &str) {
    match doc.split_once(": ") {
        Some((t, body)) if !t.trim().is_empty() && t.split_whitespace().count() <= 25 => {
            (Some(t.trim()), body)
        }
        _ => (None, doc),
    }
}

/// Canned extraction answer built from the document's words. Used by the
/// heuristic mock so that the full pipeline runs without a model.
pub fn heuristic_extraction_response(kind: ExtractionPrompt, doc: &str) -> String {
    let words = content_words(doc);
    match kind {
        ExtractionPrompt::Category => {
            let mut freq: HashMap<String, usize> = HashMap::new();
            for w in doc.split(|c: char| !c.is_alphanumeric()).filter(|w| is_content_word(w)) {
                *freq.entry(w.to_lowercase()).or_default() += 1;
            }
            let mut ranked: Vec<(usize, &String)> = words.iter().enumerate().collect();
            ranked.sort_by(|a, b| {
                freq[&b.1.to_lowercase()]
                    .cmp(&freq[&a.1.to_lowercase()])
                    .then(a.0.cmp(&b.0))
            });
            let field: Vec<String> = ranked.iter().take(2).map(|(_, w)| title_case(w)).collect();
            let field = if field.is_empty() {
                "General".to_string()
            } else {
                field.join(" ")
            };
            let topic = match split_title(doc) {
                (Some(t), _) => t.to_string(),
                (None, _) => {
                    let head: Vec<&str> = doc.split_whitespace().take(8).collect();
                    if head.is_empty() {
                        "Untitled".to_string()
                    } else {
                        head.join(" ")
                    }
                }
            };
            format!("Computer Science -> {field} -> {topic}")
        }
        ExtractionPrompt::Sections => {
            let (_, body) = split_title(doc);
            let mut out = String::from("Here are the proposed sections:\n");
            let mut n = 0;
            for sentence in body.split(['.', '?', '!']) {
                let heading: Vec<String> = content_words(sentence)
                    .iter()
                    .take(4)
                    .map(|w| title_case(w))
                    .collect();
                if heading.is_empty() {
                    continue;
                }
                n += 1;
                out.push_str(&format!("{n}. {}\n", heading.join(" ")));
                if n == 6 {
                    break;
                }
            }
            if n == 0 {
                out.push_str("1. Overview\n");
            }
            out
        }
        ExtractionPrompt::Keywords => {
            let kws: Vec<&str> = words.iter().take(40).map(String::as_str).collect();
            if kws.is_empty() {
                "Keywords: document".to_string()
            } else {
                format!("Keywords: {}", kws.join(", "))
            }
        }
        ExtractionPrompt::PseudoQueries => {
            let mut out = String::new();
            if words.is_empty() {
                out.push_str("1. document\n");
                return out;
            }
            for i in 0..20 {
                let a = &words[i % words.len()];
                let b = &words[(i + 1) % words.len()];
                let c = &words[(i + 2) % words.len()];
                let q = match i % 3 {
                    0 => format!("{a} {b} {c}"),
                    1 => format!("papers on {a} and {b}"),
                    _ => format!("how does {a} relate to {c}?"),
                };
                out.push_str(&format!("{}. {q}\n", i + 1));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::render_listwise;

    #[test]
    fn overlap_example() {
        let passages = ["graph neural network survey", "cooking recipes", "neural decoding"];
        assert_eq!(
            mock_rank_by_overlap("graph neural network", &passages),
            "[1] > [3] > [2]"
        );
    }

    #[test]
    fn overlap_ties_and_empty_query() {
        let same = ["x y", "x y", "x y"];
        assert_eq!(mock_rank_by_overlap("x", &same), "[1] > [2] > [3]");
        assert_eq!(
            mock_rank_by_overlap("", &["a", "b", "c"]),
            "[1] > [2] > [3]"
        );
    }

    #[test]
    fn scripted_then_exhausted() {
        let m = MockBackend::scripted("m", vec!["ok".into()]);
        assert_eq!(m.complete(&ChatRequest::new("m", "p")).unwrap().text, "ok");
        assert!(m.complete(&ChatRequest::new("m", "p")).is_err());
        assert_eq!(m.calls(), 2);
    }

    #[test]
    fn heuristic_answers_rerank_prompt() {
        let m = MockBackend::heuristic("m");
        let p = render_listwise("neural decoding", &["cooking", "neural decoding methods"]);
        assert_eq!(m.complete(&ChatRequest::new("m", p)).unwrap().text, "[2] > [1]");
        assert!(m.complete(&ChatRequest::new("m", "what?")).is_err());
    }

    #[test]
    fn heuristic_extraction_shapes() {
        let doc = "Sparse Graph Transformers: We propose sparse attention for graph transformers. \
                   Experiments on molecular benchmarks show gains. Code is released.";
        let cat = heuristic_extraction_response(ExtractionPrompt::Category, doc);
        assert_eq!(cat.matches(" -> ").count(), 2);
        assert!(cat.ends_with("-> Sparse Graph Transformers"));
        let kw = heuristic_extraction_response(ExtractionPrompt::Keywords, doc);
        assert!(kw.starts_with("Keywords: Sparse, Graph, Transformers"));
        let secs = heuristic_extraction_response(ExtractionPrompt::Sections, doc);
        assert!(secs.contains("1. Propose Sparse Attention Graph"));
        let qs = heuristic_extraction_response(ExtractionPrompt::PseudoQueries, doc);
        assert_eq!(qs.lines().count(), 20);
    }
}
