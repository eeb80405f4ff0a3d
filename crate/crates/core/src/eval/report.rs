use std::collections::{BTreeMap, HashSet};

use crate::corpus::{Qrels, RunResult};

use super::cost::{cost_report, Usd};
use super::ledger::TokenLedger;
use super::metrics::{map_at_k, ndcg_at_k_with_gain, recall_at_k, Gain};

pub const METRIC_FAMILIES: [&str; 3] = ["ndcg", "map", "recall"];

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub gain: Gain,
    /// When set, run entries outside this set are reported as unknown.
    pub known_docs: Option<HashSet<String>>,
    pub price_per_million: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![5, 10],
            gain: Gain::Linear,
            known_docs: None,
            price_per_million: None,
        }
    }
}

/// Metric values for one query, keyed by `(family, k)`.
pub type QueryScores = BTreeMap<(String, usize), f64>;

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub per_query: BTreeMap<String, QueryScores>,
    pub token_total: TokenLedger,
    pub cost: Option<Usd>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Unweighted mean over evaluated queries.
    pub fn aggregate(&self, family: &str, k: usize) -> Option<f64> {
        if self.per_query.is_empty() {
            return None;
        }
        let key = (family.to_string(), k);
        let values: Vec<f64> = self
            .per_query
            .values()
            .filter_map(|m| m.get(&key).copied())
            .collect();
        if values.len() != self.per_query.len() {
            return None;
        }
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }

    fn columns(&self) -> Vec<(String, usize)> {
        METRIC_FAMILIES
            .iter()
            .flat_map(|f| self.ks.iter().map(move |&k| (f.to_string(), k)))
            .collect()
    }

    /// Aligned text table, values ×100 with one decimal.
    pub fn to_table(&self) -> String {
        let cols = self.columns();
        let short = |f: &str| match f {
            "ndcg" => "N",
            "map" => "M",
            _ => "R",
        };
        let width = self
            .per_query
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = format!("{:<width$}", "query");
        for (f, k) in &cols {
            out.push_str(&format!("  {:>6}", format!("{}@{k}", short(f))));
        }
        out.push('\n');
        for (qid, scores) in &self.per_query {
            out.push_str(&format!("{qid:<width$}"));
            for c in &cols {
                out.push_str(&format!("  {:>6.1}", scores[c] * 100.0));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<width$}", "mean"));
        for (f, k) in &cols {
            match self.aggregate(f, *k) {
                Some(v) => out.push_str(&format!("  {:>6.1}", v * 100.0)),
                None => out.push_str(&format!("  {:>6}", "-")),
            }
        }
        out.push('\n');
        out.push_str(&format!(
            "tokens: {} prompt + {} completion = {}\n",
            self.token_total.prompt_tokens(),
            self.token_total.completion_tokens(),
            self.token_total.total()
        ));
        if let Some(c) = self.cost {
            out.push_str(&format!("cost: {c}\n"));
        }
        out
    }

    /// One JSON object per query, metric keys in table order.
    pub fn to_jsonl(&self) -> String {
        let cols = self.columns();
        let mut out = String::new();
        for (qid, scores) in &self.per_query {
            let mut line = format!("{{\"query_id\":{}", serde_json::to_string(qid).unwrap());
            for c in &cols {
                line.push_str(&format!(
                    ",\"{}@{}\":{}",
                    c.0,
                    c.1,
                    serde_json::to_string(&scores[c]).unwrap()
                ));
            }
            line.push_str("}\n");
            out.push_str(&line);
        }
        out
    }
}

/// Scores every run query that has judgments. Queries absent from `qrels` are
/// skipped with a warning; unjudged documents count as non-relevant.
pub fn evaluate_run(runs: &[RunResult], qrels: &Qrels, opts: &EvalOptions) -> MetricsReport {
    let mut report = MetricsReport {
        ks: opts.ks.clone(),
        ..Default::default()
    };
    for run in runs {
        report.token_total.merge(&run.token_usage);
        let Some(judged) = qrels.for_query(&run.query_id) else {
            report
                .warnings
                .push(format!("query {} has no judgments; skipped", run.query_id));
            continue;
        };
        if let Some(known) = &opts.known_docs {
            let unknown: Vec<&str> = run
                .ranking
                .iter()
                .filter(|d| !known.contains(d.as_str()))
                .map(String::as_str)
                .collect();
            if !unknown.is_empty() {
                report.warnings.push(format!(
                    "query {} ranks {} unknown doc_id(s), e.g. {}; treated as non-relevant",
                    run.query_id,
                    unknown.len(),
                    unknown[0]
                ));
            }
        }
        let mut scores = QueryScores::new();
        for &k in &opts.ks {
            scores.insert(
                ("ndcg".into(), k),
                ndcg_at_k_with_gain(&run.ranking, judged, k, opts.gain),
            );
            scores.insert(("map".into(), k), map_at_k(&run.ranking, judged, k));
            scores.insert(("recall".into(), k), recall_at_k(&run.ranking, judged, k));
        }
        if report.per_query.insert(run.query_id.clone(), scores).is_some() {
            report
                .warnings
                .push(format!("query {} appears twice in the run; last wins", run.query_id));
        }
    }
    report.cost = opts
        .price_per_million
        .map(|p| cost_report(&report.token_total, p));
    report
}
