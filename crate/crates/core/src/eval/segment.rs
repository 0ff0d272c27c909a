use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{mean_metrics, MetricsAtK};
use super::UserResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentAxis {
    User,
    Item,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSpec {
    pub axes: Vec<SegmentAxis>,
    /// Share of ranked members in each of the warm and cold segments.
    pub percent: usize,
    /// Segments with fewer evaluated users are flagged.
    pub min_size: usize,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        Self { axes: vec![SegmentAxis::User, SegmentAxis::Item], percent: 20, min_size: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Users or items assigned to the segment, in rank order.
    pub members: Vec<String>,
    /// Evaluated users whose result falls in this segment.
    pub users: usize,
    pub metrics: Vec<MetricsAtK>,
    pub too_small: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub axis: SegmentAxis,
    /// Top share by training review count.
    pub warm: Segment,
    /// Bottom share by training review count.
    pub cold: Segment,
    /// Warm and cold boundaries fall on equal counts, so membership was
    /// decided by id order.
    pub degenerate: bool,
}

/// Split `counts` into cold and warm groups: members sorted by ascending
/// count then id, `floor(n * percent / 100)` from each end.
pub fn segment_members(counts: &BTreeMap<String, usize>, percent: usize) -> (Vec<String>, Vec<String>, bool) {
    let mut ranked: Vec<(&String, usize)> = counts.iter().map(|(k, v)| (k, *v)).collect();
    ranked.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let m = ranked.len() * percent / 100;
    let cold: Vec<String> = ranked[..m].iter().map(|(k, _)| (*k).clone()).collect();
    let warm: Vec<String> = ranked[ranked.len() - m..].iter().rev().map(|(k, _)| (*k).clone()).collect();
    let degenerate = m > 0 && {
        let cold_max = ranked[m - 1].1;
        let warm_min = ranked[ranked.len() - m].1;
        let next_above_cold = ranked.get(m).map(|r| r.1);
        let next_below_warm = ranked.len().checked_sub(m + 1).map(|i| ranked[i].1);
        warm_min <= cold_max || next_above_cold == Some(cold_max) || next_below_warm == Some(warm_min)
    };
    (cold, warm, degenerate)
}

/// Per-segment metrics. On the user axis members are evaluated users ranked
/// by their training count; on the item axis members are items ranked by
/// training count and a user belongs to the segment of their test target.
pub fn segment_report(
    results: &[UserResult],
    counts: &BTreeMap<String, usize>,
    axis: SegmentAxis,
    spec: &SegmentSpec,
    ks: &[usize],
) -> SegmentReport {
    let counts: BTreeMap<String, usize> = match axis {
        SegmentAxis::User => {
            results.iter().map(|r| (r.user_id.clone(), counts.get(&r.user_id).copied().unwrap_or(0))).collect()
        }
        SegmentAxis::Item => counts.clone(),
    };
    let (cold, warm, degenerate) = segment_members(&counts, spec.percent);
    let build = |members: Vec<String>| {
        let set: std::collections::HashSet<&str> = members.iter().map(String::as_str).collect();
        let rows: Vec<&UserResult> = results
            .iter()
            .filter(|r| match axis {
                SegmentAxis::User => set.contains(r.user_id.as_str()),
                SegmentAxis::Item => set.contains(r.target.as_str()),
            })
            .collect();
        Segment {
            users: rows.len(),
            metrics: mean_metrics(rows.iter().map(|r| r.metrics.as_slice()), ks),
            too_small: rows.len() < spec.min_size,
            members,
        }
    };
    SegmentReport { axis, warm: build(warm), cold: build(cold), degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_users_by_count() {
        let counts: BTreeMap<String, usize> = (1..=10).map(|c| (format!("u{c:02}"), c)).collect();
        let (cold, warm, degenerate) = segment_members(&counts, 20);
        assert_eq!(cold, ["u01", "u02"]);
        assert_eq!(warm, ["u10", "u09"]);
        assert!(!degenerate);
    }

    #[test]
    fn equal_counts_fall_back_to_id_order() {
        let counts: BTreeMap<String, usize> = (0..10).map(|i| (format!("u{i}"), 3)).collect();
        let (cold, warm, degenerate) = segment_members(&counts, 20);
        assert_eq!(cold, ["u0", "u1"]);
        assert_eq!(warm, ["u9", "u8"]);
        assert!(degenerate);
    }
}
