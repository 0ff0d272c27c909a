use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread;

use personarank::embedding::{decay_weights, EmbeddingVector};
use personarank::eval::compute_metrics;
use personarank::index::{rerank, IndexEntry, IndexMetadata, PersonaIndex, UnknownItemMode};
use personarank::pipeline::{filter_aspect_pool, AspectTuple};
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n == 0.0 {
        let mut e = vec![0.0; v.len()];
        e[0] = 1.0;
        return e;
    }
    v.into_iter().map(|x| x / n).collect()
}

const DIM: usize = 6;

fn vector() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, DIM).prop_map(unit)
}

fn entry(id: usize) -> impl Strategy<Value = IndexEntry<f32>> {
    (prop::collection::vec(vector(), 0..=7), vector()).prop_map(move |(personas, summary)| IndexEntry {
        item_id: format!("item{id:03}"),
        persona_payloads: (0..personas.len()).map(|k| format!("{{\"name\":\"p{k}\"}}")).collect(),
        persona_vectors: personas.into_iter().map(EmbeddingVector::new).collect(),
        summary_vector: EmbeddingVector::new(summary),
    })
}

fn index() -> impl Strategy<Value = PersonaIndex<f32>> {
    (1usize..25)
        .prop_flat_map(|n| (0..n).map(entry).collect::<Vec<_>>())
        .prop_map(|entries| PersonaIndex::from_entries(DIM, entries, IndexMetadata::default()).unwrap())
}

fn tuple() -> impl Strategy<Value = AspectTuple> {
    prop::collection::vec(prop::option::of("[a-z]{1,6}"), 4).prop_map(|vals| AspectTuple {
        user_id: "u".into(),
        item_id: "i".into(),
        slots: vals.into_iter().enumerate().map(|(i, v)| (format!("slot{i}"), v)).collect::<BTreeMap<_, _>>(),
        split: None,
    })
}

proptest! {
    #[test]
    fn aspect_filter_is_idempotent(pool in prop::collection::vec(tuple(), 0..30), max in 0.0f64..=1.0) {
        let once = filter_aspect_pool(&pool, max);
        prop_assert_eq!(filter_aspect_pool(&once, max), once.clone());
        prop_assert!(once.iter().all(|t| t.null_fraction() <= max));
        prop_assert_eq!(once.len(), pool.iter().filter(|t| t.null_fraction() <= max).count());
    }

    #[test]
    fn rerank_is_a_permutation_of_known_candidates(
        index in index(),
        user in vector(),
        picks in prop::collection::vec(0usize..40, 1..30),
    ) {
        let candidates: Vec<String> = picks.iter().map(|i| format!("item{i:03}")).collect();
        let out = rerank(&user, &candidates, &index, UnknownItemMode::Lenient).unwrap();
        let mut got: Vec<&str> = out.ranked.iter().map(|c| c.item_id.as_str()).collect();
        let mut known: Vec<&str> = candidates.iter().filter(|c| index.get(c).is_some()).map(String::as_str).collect();
        got.sort_unstable();
        known.sort_unstable();
        prop_assert_eq!(got, known);
        let unknown: Vec<&String> = candidates.iter().filter(|c| index.get(c).is_none()).collect();
        prop_assert_eq!(out.dropped.iter().collect::<Vec<_>>(), unknown.clone());
        prop_assert!(out.ranked.windows(2).all(|w| w[0].score >= w[1].score));
        if !unknown.is_empty() {
            prop_assert!(rerank(&user, &candidates, &index, UnknownItemMode::Strict).is_err());
        }
    }

    #[test]
    fn ranking_ignores_positive_user_scale(
        index in index(),
        user in vector(),
        exp in -3i32..=3,
    ) {
        let candidates: Vec<String> = index.entries().iter().map(|e| e.item_id.clone()).collect();
        let scaled: Vec<f32> = user.iter().map(|x| x * 2f32.powi(exp)).collect();
        let a = rerank(&user, &candidates, &index, UnknownItemMode::Strict).unwrap();
        let b = rerank(&scaled, &candidates, &index, UnknownItemMode::Strict).unwrap();
        let order = |o: &personarank::index::RerankOutcome| o.ranked.iter().map(|c| c.item_id.clone()).collect::<Vec<_>>();
        prop_assert_eq!(order(&a), order(&b));
    }

    #[test]
    fn index_bytes_round_trip(index in index()) {
        let bytes = index.to_bytes();
        let back = PersonaIndex::<f32>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.build_id(), index.build_id());
        prop_assert_eq!(back, index);
    }

    #[test]
    fn decay_weights_are_a_nonincreasing_distribution(n in 1usize..40, gamma in 0.05f64..=1.0) {
        let w = decay_weights(n, gamma);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn metrics_grow_with_the_cutoff(len in 1usize..60, target in 0usize..80) {
        let ranked: Vec<String> = (0..len).map(|i| i.to_string()).collect();
        let m = compute_metrics(&ranked, &target.to_string(), &[1, 5, 10, 20, 50]);
        prop_assert!(m.windows(2).all(|p| p[0].hr <= p[1].hr && p[0].mrr <= p[1].mrr && p[0].ndcg <= p[1].ndcg));
        prop_assert!(m.iter().all(|x| x.ndcg <= x.hr && x.mrr <= x.hr));
    }
}

#[test]
fn concurrent_reranks_equal_serial_ones() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let index = Arc::new(index().new_tree(&mut runner).unwrap().current());
    let users: Vec<Vec<f32>> = (0..64).map(|_| vector().new_tree(&mut runner).unwrap().current()).collect();
    let candidates: Vec<String> = index.entries().iter().map(|e| e.item_id.clone()).collect();
    let serial: Vec<_> =
        users.iter().map(|u| rerank(u, &candidates, &index, UnknownItemMode::Strict).unwrap()).collect();
    let handles: Vec<_> = users
        .iter()
        .cloned()
        .map(|u| {
            let index = Arc::clone(&index);
            let candidates = candidates.clone();
            thread::spawn(move || rerank(&u, &candidates, &index, UnknownItemMode::Strict).unwrap())
        })
        .collect();
    let parallel: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(parallel, serial);
}
