//! Prompt templates for feature extraction and listwise reranking.
//!
//! The extraction templates take the document verbatim. The reranking
//! template renders each passage and the query on a single line so that
//! identifiers stay at line starts.

use crate::text::squash_whitespace;

pub const CATEGORY_HEAD: &str = "Please analyze this document for its topic and categories:";
pub const CATEGORY_TAIL: &str = "Provide a comprehensive analysis that includes:
1. The broad category (coarse-grained) this document belongs to
2. The specific category (fine-grained) within that broad category
3. A concise, title-like description of the document's topic
Deliver the analysis in one concise paragraph.";

pub const SECTIONS_HEAD: &str =
    "Identify 3-8 logical sections that would effectively organize this document's content:";
pub const SECTIONS_TAIL: &str = "Generate appropriate subtitle-style headings for each section that would help structure the document. Sections should be comprehensive and cover the full scope of the content.";

pub const KEYWORDS_HEAD: &str =
    "Extract a comprehensive list of at least 30 diverse keywords and concepts from this document:";
pub const KEYWORDS_TAIL: &str = "Generate as many diverse, relevant keywords and concepts as possible. Include both specific terms and broader conceptual themes.";

pub const QUERIES_HEAD: &str =
    "Generate 20 diverse search queries that users might enter to find this document:";
pub const QUERIES_TAIL: &str = "Create different types of queries that cover various aspects of the document content. Queries should be diverse in wording, length, and specificity.";

/// The four extraction prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtractionPrompt {
    Category,
    Sections,
    Keywords,
    PseudoQueries,
}

impl ExtractionPrompt {
    pub const ALL: [ExtractionPrompt; 4] = [
        ExtractionPrompt::Category,
        ExtractionPrompt::Sections,
        ExtractionPrompt::Keywords,
        ExtractionPrompt::PseudoQueries,
    ];

    fn parts(self) -> (&'static str, &'static str) {
        match self {
            ExtractionPrompt::Category => (CATEGORY_HEAD, CATEGORY_TAIL),
            ExtractionPrompt::Sections => (SECTIONS_HEAD, SECTIONS_TAIL),
            ExtractionPrompt::Keywords => (KEYWORDS_HEAD, KEYWORDS_TAIL),
            ExtractionPrompt::PseudoQueries => (QUERIES_HEAD, QUERIES_TAIL),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExtractionPrompt::Category => "category",
            ExtractionPrompt::Sections => "sections",
            ExtractionPrompt::Keywords => "keywords",
            ExtractionPrompt::PseudoQueries => "pseudo_queries",
        }
    }

    pub fn render(self, document: &str) -> String {
        let (head, tail) = self.parts();
        format!("{head}\n{document}\n{tail}")
    }

    /// Recovers `(kind, document)` from a rendered extraction prompt.
    pub fn recognize(prompt: &str) -> Option<(ExtractionPrompt, &str)> {
        Self::ALL.into_iter().find_map(|kind| {
            let (head, tail) = kind.parts();
            let doc = prompt
                .strip_prefix(head)?
                .strip_prefix('\n')?
                .strip_suffix(tail)?
                .strip_suffix('\n')?;
            Some((kind, doc))
        })
    }
}

const RERANK_INTRO: &str = "You are an LLM reranker, an intelligent assistant that can rank passages based on their relevancy to the query.";
const RERANK_QUERY_LINE: &str = "Rank the passages based on their relevance to the search query: ";
const RERANK_SEARCH_LINE: &str = "Search Query: ";
const RERANK_OUTPUT_LINE: &str = "The output format should be [passage_id] > [passage_id] > ..., (If the full list is very long, generate at least 10) e.g., [4] > [2] > ... Only respond with the ranking results, do not say any word or explain.";

/// Renders the listwise reranking prompt. Callers guarantee `passages` is
/// non-empty.
pub fn render_listwise(query: &str, passages: &[impl AsRef<str>]) -> String {
    let num = passages.len();
    let query = squash_whitespace(query);
    let mut out = String::new();
    out.push_str(RERANK_INTRO);
    out.push('\n');
    out.push_str(&format!(
        "I will provide you with {num} passages (either represented by full text, previous user query, keywords or structured analysis), each indicated by a numerical identifier [].\n"
    ));
    out.push_str(&format!("{RERANK_QUERY_LINE}{query}.\n"));
    for (i, p) in passages.iter().enumerate() {
        out.push_str(&format!("[{}]{}\n", i + 1, squash_whitespace(p.as_ref())));
    }
    out.push_str(&format!("{RERANK_SEARCH_LINE}{query}.\n"));
    out.push_str(&format!(
        "Rank the {num} passages above based on their relevance to the search query. All the passages should be in descending order of relevance.\n"
    ));
    out.push_str(RERANK_OUTPUT_LINE);
    out
}

/// Recovers `(query, passages)` from a prompt made by [`render_listwise`].
pub fn parse_listwise(prompt: &str) -> Option<(String, Vec<String>)> {
    let mut lines = prompt.lines();
    if lines.next()? != RERANK_INTRO {
        return None;
    }
    let num: usize = lines
        .next()?
        .strip_prefix("I will provide you with ")?
        .split_whitespace()
        .next()?
        .parse()
        .ok()?;
    let query = lines.next()?.strip_prefix(RERANK_QUERY_LINE)?;
    let query = query.strip_suffix('.').unwrap_or(query).to_string();
    let mut passages = Vec::with_capacity(num);
    for i in 1..=num {
        let marker = format!("[{i}]");
        passages.push(lines.next()?.strip_prefix(marker.as_str())?.to_string());
    }
    lines.next()?.strip_prefix(RERANK_SEARCH_LINE)?;
    Some((query, passages))
}
