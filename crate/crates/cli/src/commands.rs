use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tracing::{info, warn};

use corank_core::corpus::{
    load_corpus, load_qrels, load_queries, load_run, write_atomic, write_run, CandidateList,
    Corpus, Query, RunResult,
};
use corank_core::embedding::SelectedFeatures;
use corank_core::eval::{
    cost_for_tokens, cost_report, evaluate_run, format_millions, strategy_label,
    token_comparison_table, ComparisonRow, EvalOptions, MetricsReport, TokenLedger,
};
use corank_core::extraction::{extract_all, Feature, FeatureSet, FeatureStore};
use corank_core::representation::{build_representation, count_tokens, Form};
use corank_core::rerank::{RerankConfig, RerankContext, Strategy};
use corank_core::retrieval::{bm25_search, search_all, DenseIndex, InvertedIndex};

use crate::config::{build_backend, build_embedder, require_file, ExperimentConfig, Retriever};

fn load_corpus_checked(cfg: &ExperimentConfig) -> Result<Corpus> {
    require_file(&cfg.corpus, "corpus")?;
    load_corpus(&cfg.corpus).with_context(|| format!("loading corpus {}", cfg.corpus.display()))
}

#[derive(Debug)]
pub struct ExtractSummary {
    pub extracted: usize,
    pub skipped: usize,
    pub failed: usize,
    pub feature_successes: BTreeMap<Feature, usize>,
    pub tokens: TokenLedger,
    pub features_path: PathBuf,
}

impl std::fmt::Display for ExtractSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{} extracted, {} skipped, {} failed -> {}",
            self.extracted,
            self.skipped,
            self.failed,
            self.features_path.display()
        )?;
        for feature in Feature::ALL {
            let n = self.feature_successes.get(&feature).copied().unwrap_or(0);
            writeln!(f, "  {:<15} {n} ok", feature.name())?;
        }
        write!(
            f,
            "tokens: {} prompt + {} completion = {}",
            self.tokens.prompt_tokens(),
            self.tokens.completion_tokens(),
            self.tokens.total()
        )
    }
}

pub fn cmd_extract(cfg: &ExperimentConfig) -> Result<ExtractSummary> {
    let corpus = load_corpus_checked(cfg)?;
    let features_path = cfg.features_path();
    let store = FeatureStore::open(&features_path)?;
    let backend = build_backend(&cfg.backend, cfg.extraction_model())?;
    let report = extract_all(&corpus, backend.as_ref(), &store, cfg.backend.parallelism)?;
    for fail in &report.failures {
        for e in &fail.errors {
            warn!(doc_id = %fail.doc_id, "extraction failed: {e}");
        }
    }
    Ok(ExtractSummary {
        extracted: report.extracted,
        skipped: report.skipped,
        failed: report.failures.len(),
        feature_successes: report.feature_successes,
        tokens: report.tokens,
        features_path,
    })
}

/// First-stage candidates for every query, in query order.
pub fn retrieve(cfg: &ExperimentConfig, corpus: &Corpus, queries: &[Query]) -> Result<Vec<CandidateList>> {
    let threads = cfg.backend.parallelism;
    let lists = match cfg.retriever {
        Retriever::Bm25 => {
            std::fs::create_dir_all(&cfg.output_dir)?;
            let index = InvertedIndex::load_or_build(cfg.output_dir.join("bm25.index"), corpus)?;
            search_all(queries, threads, |q| bm25_search(&index, q, cfg.retrieve_m))?
        }
        Retriever::Dense => {
            let embedder = build_embedder(&cfg.embedder)?;
            let index = DenseIndex::build(corpus, embedder.as_ref())?;
            search_all(queries, threads, |q| index.search(embedder.as_ref(), q, cfg.retrieve_m))?
        }
    };
    Ok(lists)
}

pub fn first_stage_runs(tag: &str, lists: &[CandidateList]) -> Vec<RunResult> {
    lists
        .iter()
        .map(|c| RunResult {
            query_id: c.query_id.clone(),
            ranking: c.doc_ids(),
            strategy_tag: tag.to_string(),
            token_usage: TokenLedger::default(),
        })
        .collect()
}

#[derive(Debug)]
pub struct RerankOutput {
    pub strategy: Strategy,
    pub path: PathBuf,
    pub tokens: TokenLedger,
}

pub fn run_path(output_dir: &Path, tag: &str) -> PathBuf {
    output_dir.join(format!("{tag}.run"))
}

/// Retrieves candidates, writes the first-stage run, then reranks with each
/// strategy and writes one run file (plus token ledger) per strategy.
pub fn cmd_rerank(cfg: &ExperimentConfig, strategies: &[Strategy]) -> Result<Vec<RerankOutput>> {
    let corpus = load_corpus_checked(cfg)?;
    require_file(&cfg.queries, "queries")?;
    let queries = load_queries(&cfg.queries)?;
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;

    let candidates = retrieve(cfg, &corpus, &queries)?;
    let first_stage = run_path(&cfg.output_dir, cfg.retriever.tag());
    write_run(&first_stage_runs(cfg.retriever.tag(), &candidates), &first_stage)?;
    info!("first-stage run -> {}", first_stage.display());

    let features: Option<HashMap<String, FeatureSet>> = if strategies.iter().any(|s| s.uses_features()) {
        let path = cfg.features_path();
        require_file(&path, "feature sidecar (run `corank extract` first)")?;
        Some(FeatureStore::load(&path)?.to_map())
    } else {
        None
    };
    let backend = build_backend(&cfg.backend, &cfg.backend.model)?;
    let embedder = build_embedder(&cfg.embedder)?;

    let mut outputs = Vec::new();
    for &strategy in strategies {
        let rcfg = RerankConfig { strategy, ..cfg.rerank.clone() };
        rcfg.validate()?;
        let ctx = RerankContext {
            corpus: &corpus,
            backend: backend.as_ref(),
            config: &rcfg,
            features: features.as_ref(),
            embedder: Some(embedder.as_ref()),
        };
        let runs = ctx
            .rerank_all(&queries, &candidates, cfg.backend.parallelism)
            .with_context(|| format!("{strategy} reranking"))?;
        let path = run_path(&cfg.output_dir, strategy.tag());
        write_run(&runs, &path)?;
        let tokens: TokenLedger = runs.iter().map(|r| &r.token_usage).sum();
        info!("{strategy}: {} queries, {} tokens -> {}", runs.len(), tokens.total(), path.display());
        outputs.push(RerankOutput { strategy, path, tokens });
    }
    Ok(outputs)
}

#[derive(Debug)]
pub struct EvalOutput {
    pub reports: Vec<(PathBuf, String, MetricsReport)>,
    /// Present when more than one run was evaluated.
    pub comparison: Option<String>,
}

fn report_path(output_dir: &Path, run: &Path, ext: &str) -> PathBuf {
    let stem = run
        .file_name()
        .map(|s| s.to_string_lossy().trim_end_matches(".run").to_string())
        .unwrap_or_else(|| "run".into());
    output_dir.join(format!("{stem}.{ext}"))
}

/// Scores each run against the qrels and writes `<run>.metrics.jsonl` and
/// `<run>.metrics.txt` into the output directory.
pub fn cmd_eval(cfg: &ExperimentConfig, runs: &[PathBuf]) -> Result<EvalOutput> {
    if runs.is_empty() {
        bail!("no run files given");
    }
    require_file(&cfg.qrels, "qrels")?;
    let qrels = load_qrels(&cfg.qrels)?;
    let known_docs = if cfg.corpus.is_file() {
        Some(load_corpus(&cfg.corpus)?.iter().map(|d| d.doc_id.clone()).collect::<HashSet<_>>())
    } else {
        None
    };
    let opts = EvalOptions {
        known_docs,
        gain: cfg.gain,
        price_per_million: Some(cfg.price_per_million),
        ..EvalOptions::default()
    };
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut reports = Vec::new();
    for path in runs {
        require_file(path, "run file")?;
        let results = load_run(path).with_context(|| format!("loading run {}", path.display()))?;
        let tag = results
            .first()
            .map(|r| r.strategy_tag.clone())
            .unwrap_or_else(|| "empty".into());
        let report = evaluate_run(&results, &qrels, &opts);
        for w in &report.warnings {
            warn!("{}: {w}", path.display());
        }
        write_atomic(&report_path(&cfg.output_dir, path, "metrics.jsonl"), report.to_jsonl().as_bytes())?;
        write_atomic(&report_path(&cfg.output_dir, path, "metrics.txt"), report.to_table().as_bytes())?;
        reports.push((path.clone(), tag, report));
    }
    let comparison = (reports.len() > 1).then(|| {
        let rows: Vec<ComparisonRow> = reports
            .iter()
            .map(|(_, tag, r)| ComparisonRow::from_report(strategy_label(tag), r))
            .collect();
        token_comparison_table(&rows, cfg.price_per_million)
    });
    if let Some(table) = &comparison {
        write_atomic(&cfg.output_dir.join("comparison.txt"), table.as_bytes())?;
    }
    Ok(EvalOutput { reports, comparison })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub label: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub max: usize,
}

impl Distribution {
    pub fn of(label: impl Into<String>, mut values: Vec<usize>) -> Self {
        values.sort_unstable();
        let n = values.len();
        let at = |q: f64| -> f64 {
            if n == 0 {
                return 0.0;
            }
            // Nearest-rank percentile.
            let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
            values[rank - 1] as f64
        };
        let median = match n {
            0 => 0.0,
            n if n % 2 == 1 => values[n / 2] as f64,
            n => (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0,
        };
        Distribution {
            label: label.into(),
            count: n,
            mean: if n == 0 { 0.0 } else { values.iter().sum::<usize>() as f64 / n as f64 },
            median,
            p95: at(0.95),
            max: values.last().copied().unwrap_or(0),
        }
    }
}

#[derive(Debug)]
pub struct TokenStats {
    pub full_text: Distribution,
    pub forms: Vec<(Form, Distribution)>,
    /// Per-document estimates, `(doc_id, [form1..form4])`.
    pub per_doc: Vec<(String, [usize; 4])>,
    pub missing_features: usize,
}

impl std::fmt::Display for TokenStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<36} {:>6} {:>8} {:>8} {:>8} {:>6}", "representation", "docs", "mean", "median", "p95", "max")?;
        for d in std::iter::once(&self.full_text).chain(self.forms.iter().map(|(_, d)| d)) {
            writeln!(
                f,
                "{:<36} {:>6} {:>8.1} {:>8.1} {:>8.1} {:>6}",
                d.label, d.count, d.mean, d.median, d.p95, d.max
            )?;
        }
        if self.missing_features > 0 {
            write!(f, "{} documents have no features", self.missing_features)?;
        }
        Ok(())
    }
}

/// Token-length distributions of full texts and of each compact form.
/// Without a query, selection takes the leading elements of each list.
pub fn cmd_token_stats(cfg: &ExperimentConfig) -> Result<TokenStats> {
    let corpus = load_corpus_checked(cfg)?;
    let features_path = cfg.features_path();
    let features = if features_path.is_file() {
        FeatureStore::load(&features_path)?.to_map()
    } else {
        warn!("no feature sidecar at {}; reporting full text only", features_path.display());
        HashMap::new()
    };
    let full: Vec<usize> = corpus.iter().map(|d| count_tokens(d.text())).collect();
    let mut per_doc = Vec::new();
    let mut missing = 0;
    for doc in corpus.iter() {
        let Some(fs) = features.get(&doc.doc_id) else {
            missing += 1;
            continue;
        };
        let sel = SelectedFeatures::leading(fs, cfg.rerank.k_keywords);
        let mut counts = [0usize; 4];
        for (i, form) in Form::ALL.into_iter().enumerate() {
            counts[i] = build_representation(&doc.doc_id, form, &fs.category, &sel)?.token_estimate;
        }
        per_doc.push((doc.doc_id.clone(), counts));
    }
    let forms = Form::ALL
        .into_iter()
        .enumerate()
        .map(|(i, form)| {
            let label = format!("form {} ({form})", form.number());
            (form, Distribution::of(label, per_doc.iter().map(|(_, c)| c[i]).collect()))
        })
        .collect();
    Ok(TokenStats {
        full_text: Distribution::of("full text", full),
        forms,
        per_doc,
        missing_features: missing,
    })
}

/// Parses `1234`, `1.01M` or `250k`.
pub fn parse_token_count(s: &str) -> Result<u64> {
    let s = s.trim();
    let (num, scale) = match s.chars().last() {
        Some('M' | 'm') => (&s[..s.len() - 1], 1e6),
        Some('K' | 'k') => (&s[..s.len() - 1], 1e3),
        _ => (s, 1.0),
    };
    let v: f64 = num.parse().with_context(|| format!("bad token count {s:?}"))?;
    if !(v >= 0.0 && v.is_finite()) {
        bail!("bad token count {s:?}");
    }
    Ok((v * scale).round() as u64)
}

/// Token usage and cost for run files (from their ledgers) and for raw
/// token counts.
pub fn cmd_cost_report(runs: &[PathBuf], tokens: &[String], price: f64) -> Result<String> {
    if runs.is_empty() && tokens.is_empty() {
        bail!("give run files and/or --tokens");
    }
    let mut out = String::new();
    for path in runs {
        let results = load_run(path).with_context(|| format!("loading run {}", path.display()))?;
        let ledger: TokenLedger = results.iter().map(|r| &r.token_usage).sum();
        let tag = results.first().map(|r| r.strategy_tag.as_str()).unwrap_or("empty");
        writeln!(
            out,
            "{} [{}]: {} tokens, {} at ${price}/M",
            path.display(),
            strategy_label(tag),
            format_millions(ledger.total()),
            cost_report(&ledger, price)
        )?;
        for (stage, t) in ledger.stages() {
            writeln!(
                out,
                "  {stage:<22} prompt {:>10}  completion {:>8}  {}",
                t.prompt,
                t.completion,
                cost_for_tokens(t.total(), price)
            )?;
        }
    }
    for t in tokens {
        let n = parse_token_count(t)?;
        writeln!(out, "{}: {}", format_millions(n), cost_for_tokens(n, price))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distribution_stats() {
        let d = Distribution::of("x", vec![5, 1, 3, 2, 4]);
        assert_eq!((d.mean, d.median, d.p95, d.max), (3.0, 3.0, 5.0, 5));
        let d = Distribution::of("x", vec![1, 2]);
        assert_eq!(d.median, 1.5);
        assert_eq!(Distribution::of("x", vec![]).count, 0);
    }

    #[test]
    fn token_counts_parse() {
        assert_eq!(parse_token_count("29.61M").unwrap(), 29_610_000);
        assert_eq!(parse_token_count("250k").unwrap(), 250_000);
        assert_eq!(parse_token_count("17").unwrap(), 17);
        assert!(parse_token_count("-1").is_err());
        assert!(parse_token_count("lots").is_err());
    }

    #[test]
    fn cost_report_for_raw_tokens() {
        let out = cmd_cost_report(&[], &["29.61M".into()], 0.1).unwrap();
        assert_eq!(out.trim(), "29.61M: $2.96");
    }
}
