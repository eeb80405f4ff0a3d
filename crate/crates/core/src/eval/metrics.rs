//! Top-k ranking metrics.
//!
//! Conventions: unjudged documents count as grade 0, a document repeated in a
//! ranking only counts at its first position, and a query with no relevant
//! documents scores 0 on every metric.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

/// Gain applied to a graded judgment in nDCG.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// gain(r) = r
    #[default]
    Linear,
    /// gain(r) = 2^r - 1
    Exponential,
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

/// Grades of the first `k` distinct documents; repeats contribute 0.
fn top_k_grades<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>, k: usize) -> Vec<u32> {
    let mut seen = HashSet::new();
    ranking
        .iter()
        .take(k)
        .map(|d| {
            let d = d.as_ref();
            if seen.insert(d) {
                judged.get(d).copied().unwrap_or(0)
            } else {
                0
            }
        })
        .collect()
}

fn relevant_count(judged: &BTreeMap<String, u32>) -> usize {
    judged.values().filter(|&&g| g > 0).count()
}

pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    ndcg_at_k_with_gain(ranking, judged, k, Gain::Linear)
}

pub fn ndcg_at_k_with_gain<S: AsRef<str>>(
    ranking: &[S],
    judged: &BTreeMap<String, u32>,
    k: usize,
    gain: Gain,
) -> f64 {
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = top_k_grades(ranking, judged, k)
        .into_iter()
        .enumerate()
        .map(|(i, g)| gain.apply(g) * discount(i))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| gain.apply(g) * discount(i))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// AP@k with relevance binarized at grade > 0, normalized by min(R, k).
pub fn map_at_k<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let total = relevant_count(judged);
    if total == 0 || k == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (i, g) in top_k_grades(ranking, judged, k).into_iter().enumerate() {
        if g > 0 {
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    precision_sum / total.min(k) as f64
}

pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let total = relevant_count(judged);
    if total == 0 {
        return 0.0;
    }
    let hits = top_k_grades(ranking, judged, k)
        .into_iter()
        .filter(|&g| g > 0)
        .count();
    hits as f64 / total as f64
}
