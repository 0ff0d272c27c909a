use serde::{Deserialize, Serialize};

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsAtK {
    pub k: usize,
    pub hr: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

impl MetricsAtK {
    pub fn zero(k: usize) -> Self {
        Self { k, hr: 0.0, mrr: 0.0, ndcg: 0.0 }
    }
}

/// 1-based rank of `target` in `ranked`, if present.
pub fn target_rank(ranked: &[String], target: &str) -> Option<usize> {
    ranked.iter().position(|id| id == target).map(|p| p + 1)
}

/// Single-target metrics for a known rank (or a missing target).
pub fn metrics_for_rank(rank: Option<usize>, ks: &[usize]) -> Vec<MetricsAtK> {
    ks.iter()
        .map(|&k| match rank {
            Some(r) if r <= k => MetricsAtK { k, hr: 1.0, mrr: 1.0 / r as f64, ndcg: 1.0 / ((r + 1) as f64).log2() },
            _ => MetricsAtK::zero(k),
        })
        .collect()
}

/// HR, MRR and NDCG at each cutoff. A target missing from the ranking scores
/// zero everywhere.
pub fn compute_metrics(ranked: &[String], target: &str, ks: &[usize]) -> Vec<MetricsAtK> {
    metrics_for_rank(target_rank(ranked, target), ks)
}

/// Element-wise mean of per-user metric rows. Summation follows input order.
pub fn mean_metrics<'a>(rows: impl IntoIterator<Item = &'a [MetricsAtK]>, ks: &[usize]) -> Vec<MetricsAtK> {
    let mut acc: Vec<MetricsAtK> = ks.iter().map(|&k| MetricsAtK::zero(k)).collect();
    let mut n = 0usize;
    for row in rows {
        for (a, m) in acc.iter_mut().zip(row) {
            a.hr += m.hr;
            a.mrr += m.mrr;
            a.ndcg += m.ndcg;
        }
        n += 1;
    }
    if n > 0 {
        for a in &mut acc {
            a.hr /= n as f64;
            a.mrr /= n as f64;
            a.ndcg /= n as f64;
        }
    }
    acc
}
