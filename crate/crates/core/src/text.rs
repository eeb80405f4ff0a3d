//! Shared text utilities: the word tokenizer used by the lexical index, the
//! overlap mock and the hash embedder, plus the default token-count heuristic.

/// Lowercased alphanumeric runs. No stemming, no stopword removal.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Estimates how many model tokens a string costs.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Whitespace word count times 4/3, rounded up.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicTokenCounter;

impl TokenCounter for HeuristicTokenCounter {
    fn count(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        (words * 4).div_ceil(3)
    }
}

/// Token estimate under the default heuristic.
pub fn count_tokens(text: &str) -> usize {
    HeuristicTokenCounter.count(text)
}

/// Collapses every whitespace run (including newlines) into one space.
pub fn squash_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
