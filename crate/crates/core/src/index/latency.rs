use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rerank, PersonaIndex, UnknownItemMode};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyWorkload {
    pub num_users: usize,
    pub num_candidates: usize,
    pub repetitions: usize,
    /// Untimed passes before measurement.
    pub warmup: usize,
    /// Candidate-list sizes for the scaling series.
    pub candidate_series: Vec<usize>,
    /// User counts for the batch series, timed as a whole batch.
    pub user_batch_series: Vec<usize>,
    pub seed: u64,
}

impl Default for LatencyWorkload {
    fn default() -> Self {
        Self {
            num_users: 1,
            num_candidates: 100,
            repetitions: 1000,
            warmup: 50,
            candidate_series: vec![20, 40, 60, 80, 100],
            user_batch_series: vec![1, 10, 50, 100],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub n: usize,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Mean per-user rerank time.
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
    /// Per-user mean at each candidate-list size.
    pub series: Vec<SeriesPoint>,
    /// Total wall time to rerank a batch of `n` users.
    pub user_batch_series: Vec<SeriesPoint>,
}

fn random_unit<T: Scalar>(rng: &mut ChaCha8Rng, dim: usize) -> Vec<T> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| T::of(x / n)).collect()
}

struct Bench<'a, T, F> {
    index: &'a PersonaIndex<T>,
    user: F,
    candidates: Vec<Vec<String>>,
}

impl<T: Scalar, F: Fn(usize) -> Vec<T>> Bench<'_, T, F> {
    fn run(&self, user: usize, n: usize) -> f64 {
        let cands = &self.candidates[user][..n.min(self.candidates[user].len())];
        let start = Instant::now();
        let u = (self.user)(user);
        let out = rerank(&u, cands, self.index, UnknownItemMode::Strict).expect("known candidates");
        let ms = start.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(out);
        ms
    }
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Time reranking random unit users over random candidate lists drawn from
/// the index. A workload with zero repetitions, users or index items yields
/// an empty report.
pub fn measure_latency<T: Scalar>(index: &PersonaIndex<T>, workload: &LatencyWorkload) -> LatencyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(workload.seed ^ 0x5eed);
    let max_users = workload.user_batch_series.iter().copied().chain([workload.num_users]).max().unwrap_or(1);
    let users: Vec<Vec<T>> = (0..max_users).map(|_| random_unit(&mut rng, index.dim())).collect();
    measure_latency_with(index, workload, |u| users[u].clone())
}

/// Like [`measure_latency`], but each timed call first produces the user
/// vector with `user(i)` for user slot `i`, so encoding cost is included.
pub fn measure_latency_with<T: Scalar>(
    index: &PersonaIndex<T>,
    workload: &LatencyWorkload,
    user: impl Fn(usize) -> Vec<T>,
) -> LatencyReport {
    if workload.repetitions == 0 || workload.num_users == 0 || index.is_empty() {
        return LatencyReport::default();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(workload.seed);
    let max_users = workload.user_batch_series.iter().copied().chain([workload.num_users]).max().unwrap_or(1);
    let max_cands = workload.candidate_series.iter().copied().chain([workload.num_candidates]).max().unwrap_or(1);
    let ids: Vec<&str> = index.entries().iter().map(|e| e.item_id.as_str()).collect();
    let bench = Bench {
        index,
        user,
        candidates: (0..max_users)
            .map(|_| (0..max_cands).map(|_| ids[rng.random_range(0..ids.len())].to_string()).collect())
            .collect(),
    };

    for i in 0..workload.warmup {
        bench.run(i % workload.num_users, workload.num_candidates);
    }
    let mut samples = Vec::with_capacity(workload.repetitions * workload.num_users);
    for _ in 0..workload.repetitions {
        for u in 0..workload.num_users {
            samples.push(bench.run(u, workload.num_candidates));
        }
    }
    let (mean_ms, std_ms) = mean_std(&samples);

    let series = workload
        .candidate_series
        .iter()
        .map(|&n| {
            let s: Vec<f64> = (0..workload.repetitions).map(|r| bench.run(r % workload.num_users, n)).collect();
            SeriesPoint { n, mean_ms: mean_std(&s).0 }
        })
        .collect();
    let batch_reps = workload.repetitions.min(20);
    let user_batch_series = workload
        .user_batch_series
        .iter()
        .map(|&n| {
            let totals: Vec<f64> = (0..batch_reps)
                .map(|_| {
                    let start = Instant::now();
                    for u in 0..n {
                        bench.run(u, workload.num_candidates);
                    }
                    start.elapsed().as_secs_f64() * 1e3
                })
                .collect();
            SeriesPoint { n, mean_ms: mean_std(&totals).0 }
        })
        .collect();
    LatencyReport { mean_ms, std_ms, samples: samples.len(), series, user_batch_series }
}
