use std::sync::LazyLock;

use regex::Regex;

use super::RerankError;
use crate::eval::TokenLedger;
use crate::llm::ChatBackend;
use crate::prompts::render_listwise;

/// A bijection on `1..=m`, as returned by a listwise ranker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self, RerankError> {
        let m = order.len();
        let mut seen = vec![false; m];
        for &i in &order {
            if i == 0 || i > m || std::mem::replace(&mut seen[i - 1], true) {
                return Err(RerankError::InvalidPermutation(order));
            }
        }
        Ok(Permutation(order))
    }

    pub fn identity(m: usize) -> Self {
        Permutation((1..=m).collect())
    }

    /// 1-based ids, best first.
    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reorders `items` so that position `j` holds `items[order[j] - 1]`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<T> {
        assert_eq!(items.len(), self.len(), "permutation length mismatch");
        self.0.iter().map(|&i| items[i - 1].clone()).collect()
    }
}

static BRACKETED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\s*(\d+)\s*\]").unwrap());

/// Reads bracketed ids in order of appearance. Ids outside `1..=m` are
/// dropped, repeats keep their first position and ids never mentioned are
/// appended in ascending order. Fails only when no valid id is found.
pub fn parse_ranking(response: &str, m: usize) -> Result<Permutation, RerankError> {
    let mut seen = vec![false; m];
    let mut order = Vec::with_capacity(m);
    for cap in BRACKETED.captures_iter(response) {
        let Ok(id) = cap[1].parse::<usize>() else {
            continue;
        };
        if (1..=m).contains(&id) && !std::mem::replace(&mut seen[id - 1], true) {
            order.push(id);
        }
    }
    if order.is_empty() {
        return Err(RerankError::Parse {
            raw: response.to_string(),
        });
    }
    order.extend((1..=m).filter(|&i| !seen[i - 1]));
    Ok(Permutation(order))
}

pub fn build_listwise_prompt(query: &str, passages: &[impl AsRef<str>]) -> Result<String, RerankError> {
    if passages.is_empty() {
        return Err(RerankError::EmptyInput);
    }
    Ok(render_listwise(query, passages))
}

/// One listwise call over `items` (doc_id, passage). Returns the doc_ids
/// reordered; token usage is recorded under `stage`.
pub fn listwise_rerank(
    query: &str,
    items: &[(String, String)],
    backend: &dyn ChatBackend,
    ledger: &mut TokenLedger,
    stage: &str,
) -> Result<Vec<String>, RerankError> {
    let passages: Vec<&str> = items.iter().map(|(_, p)| p.as_str()).collect();
    let prompt = build_listwise_prompt(query, &passages)?;
    let resp = backend.complete(&backend.request(prompt))?;
    ledger.record(stage, resp.prompt_tokens, resp.completion_tokens);
    let perm = parse_ranking(&resp.text, items.len())?;
    Ok(perm.apply(items).into_iter().map(|(id, _)| id).collect())
}

/// Window start offsets, back to front: the last window first, then moving
/// up by `step`, with the final window clamped to 0.
pub fn window_starts(total: usize, window: usize, step: usize) -> Vec<usize> {
    if total <= window {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut start = total - window;
    loop {
        starts.push(start);
        if start == 0 {
            break;
        }
        start = start.saturating_sub(step);
    }
    starts
}

/// Bottom-up sliding-window reranking. Each window reorders the working list
/// in place, so documents promoted by one window are seen by the next.
pub fn sliding_window_rerank(
    query: &str,
    items: &[(String, String)],
    window: usize,
    step: usize,
    backend: &dyn ChatBackend,
    ledger: &mut TokenLedger,
    stage: &str,
) -> Result<Vec<String>, RerankError> {
    if window == 0 || step == 0 || step > window {
        return Err(RerankError::InvalidConfig(format!(
            "need 1 <= step <= window, got window={window} step={step}"
        )));
    }
    if items.is_empty() {
        return Err(RerankError::EmptyInput);
    }
    let mut working: Vec<(String, String)> = items.to_vec();
    for start in window_starts(items.len(), window, step) {
        let end = (start + window).min(working.len());
        let ranked = listwise_rerank(query, &working[start..end], backend, ledger, stage)?;
        let by_id: std::collections::HashMap<&str, &String> = working[start..end]
            .iter()
            .map(|(id, p)| (id.as_str(), p))
            .collect();
        let reordered: Vec<(String, String)> = ranked
            .iter()
            .map(|id| (id.clone(), by_id[id.as_str()].clone()))
            .collect();
        working.splice(start..end, reordered);
    }
    Ok(working.into_iter().map(|(id, _)| id).collect())
}
