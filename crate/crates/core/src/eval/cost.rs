use std::fmt;

use super::ledger::TokenLedger;
use super::report::MetricsReport;

/// A dollar amount. Displays with two decimals.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Usd(pub f64);

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${:.2}", self.0)
    }
}

/// Cost of `tokens` at a per-million-token price.
pub fn cost_for_tokens(tokens: u64, price_per_million: f64) -> Usd {
    Usd(tokens as f64 * price_per_million / 1e6)
}

/// Cost of everything recorded in the ledger, prompt and completion alike.
pub fn cost_report(ledger: &TokenLedger, price_per_million: f64) -> Usd {
    cost_for_tokens(ledger.total(), price_per_million)
}

/// "1.01M"-style token display.
pub fn format_millions(tokens: u64) -> String {
    format!("{:.2}M", tokens as f64 / 1e6)
}

/// Display label for a strategy tag in comparison tables.
pub fn strategy_label(tag: &str) -> String {
    match tag {
        "vanilla" => "Vanilla".into(),
        "sliding" => "Sliding".into(),
        "corank" => "CoRank".into(),
        "corank-sliding" => "Both".into(),
        other => other.to_string(),
    }
}

/// One row of a performance / token / cost comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    /// nDCG@10, MAP@10, Recall@10 as fractions, when available.
    pub ndcg10: Option<f64>,
    pub map10: Option<f64>,
    pub recall10: Option<f64>,
    pub tokens: u64,
}

impl ComparisonRow {
    pub fn from_report(label: impl Into<String>, report: &MetricsReport) -> Self {
        ComparisonRow {
            label: label.into(),
            ndcg10: report.aggregate("ndcg", 10),
            map10: report.aggregate("map", 10),
            recall10: report.aggregate("recall", 10),
            tokens: report.token_total.total(),
        }
    }
}

/// Renders rows as `Method | N@10 | M@10 | R@10 | Token Usage | Cost`.
pub fn token_comparison_table(rows: &[ComparisonRow], price_per_million: f64) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", v * 100.0));
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>11}  {:>8}\n",
        "Method", "N@10", "M@10", "R@10", "Token Usage", "Cost"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>11}  {:>8}\n",
            r.label,
            pct(r.ndcg10),
            pct(r.map10),
            pct(r.recall10),
            format_millions(r.tokens),
            cost_for_tokens(r.tokens, price_per_million).to_string(),
        ));
    }
    out
}
