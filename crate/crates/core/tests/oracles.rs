//! Closed-form and brute-force oracles for the numeric core.

use personarank::embedding::{
    aggregate_user, decay_weights, head_batch_loss, infonce_grad, infonce_loss, EmbeddingVector, HeadExample,
    ProjectionHead, TrainBatch,
};
use personarank::eval::{compute_metrics, metrics_for_rank, DEFAULT_KS};
use personarank::index::{rerank, score_candidate, IndexEntry, IndexMetadata, PersonaIndex, UnknownItemMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn equal_similarities_give_ln_batch() {
    for b in [2usize, 4, 8] {
        let v = EmbeddingVector::new(vec![1.0f64, 0.0, 0.0]);
        let batch = TrainBatch { user_vectors: vec![v.clone(); b], positive_vectors: vec![v; b] };
        for tau in [0.05, 0.5, 1.0] {
            let loss = infonce_loss(&batch, tau).unwrap();
            assert!((loss - (b as f64).ln()).abs() < 1e-9, "B={b} tau={tau}: {loss}");
        }
    }
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Vec<HeadExample<f64>> {
    (0..b)
        .map(|_| {
            let n = rng.random_range(1..=4);
            let interactions = (0..n).map(|_| random_unit(rng, d)).collect();
            let weights = decay_weights(n, rng.random_range(0.3..=1.0));
            HeadExample { interactions, weights, persona: random_unit(rng, d) }
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let d = rng.random_range(2..=16);
        let b = rng.random_range(2..=6);
        let tau = rng.random_range(0.1..=1.0);
        let w: Vec<f64> =
            (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3)).collect();
        let head = ProjectionHead::from_weights(d, w.clone()).unwrap();
        let batch = random_batch(&mut rng, b, d);
        let (_, grad) = infonce_grad(&head, &batch, tau).unwrap();
        let h = 1e-6;
        let mut fd = vec![0.0; d * d];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut plus = w.clone();
            plus[i] += h;
            let mut minus = w.clone();
            minus[i] -= h;
            let lp = head_batch_loss(&ProjectionHead::from_weights(d, plus).unwrap(), &batch, tau).unwrap();
            let lm = head_batch_loss(&ProjectionHead::from_weights(d, minus).unwrap(), &batch, tau).unwrap();
            *slot = (lp - lm) / (2.0 * h);
        }
        let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        assert!(diff / scale < 1e-4, "case {case}: relative error {}", diff / scale);
    }
}

#[test]
fn decay_aggregation_matches_weighted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let gamma = [0.3, 0.8, 1.0][case % 3];
        let n = rng.random_range(1..=20);
        let d = rng.random_range(1..=12);
        let vectors: Vec<EmbeddingVector<f64>> =
            (0..n).map(|_| EmbeddingVector::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
        let got = aggregate_user(&vectors, gamma).unwrap();
        let total: f64 = (0..n).map(|l| gamma.powi(l as i32)).sum();
        for j in 0..d {
            let want: f64 = (0..n).map(|l| gamma.powi(l as i32) / total * vectors[l][j]).sum();
            assert!((got[j] - want).abs() < 1e-12, "case {case} dim {j}");
        }
    }
}

#[test]
fn unit_decay_is_the_plain_mean() {
    let vectors: Vec<EmbeddingVector<f64>> =
        [[0.1, 0.7], [0.3, -0.2], [0.9, 0.4]].iter().map(|v| EmbeddingVector::new(v.to_vec())).collect();
    let got = aggregate_user(&vectors, 1.0).unwrap();
    let mean = [(0.1 + 0.3 + 0.9) / 3.0, (0.7 - 0.2 + 0.4) / 3.0];
    assert_eq!(got.values(), mean);
}

fn random_entry(rng: &mut ChaCha8Rng, id: String, personas: usize, d: usize) -> IndexEntry<f64> {
    IndexEntry {
        item_id: id,
        persona_vectors: (0..personas).map(|_| EmbeddingVector::new(random_unit(rng, d))).collect(),
        persona_payloads: (0..personas).map(|k| format!("persona {k}")).collect(),
        summary_vector: EmbeddingVector::new(random_unit(rng, d)),
    }
}

fn brute_force(user: &[f64], entry: &IndexEntry<f64>) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (k, p) in entry.persona_vectors.iter().enumerate() {
        let mut s = 0.0;
        for j in 0..user.len() {
            s += user[j] * p[j];
        }
        if s > best.0 {
            best = (s, k);
        }
    }
    best
}

#[test]
fn max_persona_score_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let d = rng.random_range(2..=32);
        let k = rng.random_range(1..=7);
        let entry = random_entry(&mut rng, "i".into(), k, d);
        let user = random_unit(&mut rng, d);
        let (score, idx) = score_candidate(&user, &entry).unwrap();
        let (want, want_idx) = brute_force(&user, &entry);
        assert_eq!(score, want);
        assert_eq!(idx, Some(want_idx));
        let cos_max = entry
            .persona_vectors
            .iter()
            .map(|p| personarank::embedding::cosine(&user, p))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((score - cos_max).abs() < 1e-12);
    }
}

#[test]
fn tied_personas_resolve_to_the_lowest_index() {
    let p = EmbeddingVector::new(vec![0.6, 0.8]);
    let entry = IndexEntry {
        item_id: "i".into(),
        persona_vectors: vec![EmbeddingVector::new(vec![1.0, 0.0]), p.clone(), p],
        persona_payloads: vec!["a".into(), "b".into(), "c".into()],
        summary_vector: EmbeddingVector::new(vec![1.0, 0.0]),
    };
    assert_eq!(score_candidate(&[0.0, 1.0], &entry).unwrap(), (0.8, Some(1)));
}

#[test]
fn rerank_matches_a_stable_oracle_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = 8;
    let entries: Vec<IndexEntry<f64>> = (0..60)
        .map(|i| {
            let k = rng.random_range(0..=7);
            random_entry(&mut rng, format!("item{i:02}"), k, d)
        })
        .collect();
    // Duplicate a few entries under new ids so exact ties occur.
    let mut all = entries.clone();
    for (i, e) in entries.iter().take(10).enumerate() {
        let mut twin = e.clone();
        twin.item_id = format!("twin{i:02}");
        all.push(twin);
    }
    let index = PersonaIndex::from_entries(d, all, IndexMetadata::default()).unwrap();
    let ids: Vec<String> = index.entries().iter().map(|e| e.item_id.clone()).collect();
    for _ in 0..100 {
        let user = random_unit(&mut rng, d);
        let n = rng.random_range(1..=40);
        let candidates: Vec<String> = (0..n).map(|_| ids[rng.random_range(0..ids.len())].clone()).collect();
        let mut oracle: Vec<(usize, f64)> = candidates
            .iter()
            .enumerate()
            .map(|(pos, id)| {
                let e = index.get(id).unwrap();
                let s = if e.persona_vectors.is_empty() {
                    e.summary_vector.iter().zip(&user).map(|(a, b)| a * b).fold(0.0, |acc, x| acc + x)
                } else {
                    brute_force(&user, e).0
                };
                (pos, s)
            })
            .collect();
        // Insertion sort: stable by construction.
        for i in 1..oracle.len() {
            let mut j = i;
            while j > 0 && oracle[j - 1].1 < oracle[j].1 {
                oracle.swap(j - 1, j);
                j -= 1;
            }
        }
        let out = rerank(&user, &candidates, &index, UnknownItemMode::Strict).unwrap();
        let got: Vec<(usize, f64)> = out.ranked.iter().map(|c| (c.original_position, c.score)).collect();
        assert_eq!(got, oracle);
    }
}

#[test]
fn metrics_match_closed_forms_for_every_rank() {
    for r in 1..=25usize {
        let ranked: Vec<String> = (1..=25).map(|i| format!("c{i}")).collect();
        let got = compute_metrics(&ranked, &format!("c{r}"), &DEFAULT_KS);
        assert_eq!(got, metrics_for_rank(Some(r), &DEFAULT_KS));
        for m in &got {
            if r <= m.k {
                assert_eq!(m.hr, 1.0);
                assert_eq!(m.mrr, 1.0 / r as f64);
                assert_eq!(m.ndcg, 1.0 / ((r + 1) as f64).log2());
            } else {
                assert_eq!((m.hr, m.mrr, m.ndcg), (0.0, 0.0, 0.0));
            }
        }
    }
    let at5 = metrics_for_rank(Some(4), &[5]);
    assert_eq!(at5[0].ndcg, 1.0 / 5f64.log2());
}

#[test]
fn missing_target_scores_zero() {
    let ranked: Vec<String> = vec!["a".into(), "b".into()];
    assert!(compute_metrics(&ranked, "z", &DEFAULT_KS).iter().all(|m| m.hr == 0.0 && m.ndcg == 0.0));
}
