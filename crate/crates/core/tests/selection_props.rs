//! Adaptive selection: brute-force agreement, subset and nesting.

use corank_core::embedding::{adaptive_select, cosine, Embedder, HashEmbedder};
use corank_core::extraction::{CategoryPath, FeatureSet};
use proptest::prelude::*;

const VOCAB: &[&str] = &[
    "graph", "neural", "protein", "folding", "attention", "sparse", "retrieval", "ranking",
    "query", "passage", "token", "budget", "cost", "latency", "causal", "inference", "speech",
    "vision", "diffusion", "sampling", "federated", "client", "privacy", "robust", "adversarial",
    "summary", "translation", "dialogue", "kernel", "bayesian", "entropy", "memory", "planning",
    "reward", "policy", "molecule", "chemistry", "climate", "energy", "market",
];

fn feature_set(keywords: Vec<String>) -> FeatureSet {
    FeatureSet::new(
        CategoryPath::new(["A".into(), "B".into(), "C".into()]).unwrap(),
        vec!["Intro".into(), "Graph Methods".into(), "Speech Results".into()],
        keywords,
        vec!["what is graph ranking".into(), "speech latency".into()],
        "m",
    )
    .unwrap()
}

fn keywords() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::btree_set(
        (proptest::sample::select(VOCAB), proptest::sample::select(VOCAB))
            .prop_map(|(a, b)| format!("{a} {b}")),
        1..=30,
    )
    .prop_map(|s| s.into_iter().collect::<Vec<_>>())
    .prop_shuffle()
}

fn query() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(VOCAB), 1..6).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn equals_brute_force(kws in keywords(), q in query(), k in 0usize..8) {
        let e = HashEmbedder::new(64, 11).unwrap();
        let fs = feature_set(kws.clone());
        let sel = adaptive_select(&e, &q, &fs, k).unwrap();

        let qv = e.embed(&q).unwrap();
        let mut scored: Vec<(usize, f64)> = fs.keywords().iter().enumerate()
            .map(|(i, kw)| (i, cosine(&qv, &e.embed(kw).unwrap()).unwrap()))
            .collect();
        // Highest score first; among equal scores, the earlier element.
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expect: Vec<String> = scored.iter().take(k).map(|(i, _)| fs.keywords()[*i].clone()).collect();
        prop_assert_eq!(&sel.keywords, &expect);
        prop_assert_eq!(sel.keywords.len(), k.min(fs.keywords().len()));
        prop_assert_eq!(sel.similarity_scores.len(), sel.keywords.len());
    }

    #[test]
    fn subset_and_nesting(kws in keywords(), q in query()) {
        let e = HashEmbedder::new(64, 3).unwrap();
        let fs = feature_set(kws);
        let s3 = adaptive_select(&e, &q, &fs, 3).unwrap();
        let s5 = adaptive_select(&e, &q, &fs, 5).unwrap();
        prop_assert_eq!(&s5.keywords[..s3.keywords.len()], &s3.keywords[..]);
        prop_assert!(s5.keywords.iter().all(|k| fs.keywords().contains(k)));
        prop_assert!(fs.sections().contains(&s5.section));
        prop_assert!(fs.pseudo_queries().contains(&s5.pseudo_query));
        prop_assert_eq!(&s3.section, &s5.section);
    }

    #[test]
    fn shuffling_only_changes_ties(kws in keywords(), q in query(), seed in any::<u64>()) {
        let e = HashEmbedder::new(64, 5).unwrap();
        let a = adaptive_select(&e, &q, &feature_set(kws.clone()), 5).unwrap();
        let mut shuffled = kws.clone();
        let n = shuffled.len();
        shuffled.rotate_left((seed as usize) % n);
        let b = adaptive_select(&e, &q, &feature_set(shuffled), 5).unwrap();
        prop_assert_eq!(&a.similarity_scores, &b.similarity_scores);
    }
}
