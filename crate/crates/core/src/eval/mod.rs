//! Ranking metrics, run evaluation, token accounting and cost reporting.

mod cost;
mod ledger;
mod metrics;
mod report;

pub use cost::{
    cost_for_tokens, cost_report, format_millions, strategy_label, token_comparison_table,
    ComparisonRow, Usd,
};
pub use ledger::{StageTokens, TokenLedger};
pub use metrics::{map_at_k, ndcg_at_k, ndcg_at_k_with_gain, recall_at_k, Gain};
pub use report::{evaluate_run, EvalOptions, MetricsReport, QueryScores, METRIC_FAMILIES};
