use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::pipeline::{Provenance, Review};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSplit {
    /// Chronological, oldest first.
    pub train: Vec<Review>,
    pub validation: Review,
    pub test: Review,
}

impl UserSplit {
    /// Train plus validation interactions: the history visible when
    /// predicting the test target.
    pub fn history(&self) -> Vec<Review> {
        let mut h = self.train.clone();
        h.push(self.validation.clone());
        h
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub users: BTreeMap<String, UserSplit>,
    /// Users with fewer than three interactions and their counts.
    pub excluded: BTreeMap<String, usize>,
}

/// Chronological leave-one-out split: the last interaction is the test
/// target, the one before it validation, the rest training. Equal
/// timestamps keep file order, so the later record is treated as newer.
pub fn loo_split(reviews: &[Review]) -> SplitSet {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in reviews.iter().enumerate() {
        by_user.entry(r.user_id.as_str()).or_default().push(i);
    }
    let mut split = SplitSet::default();
    for (user, mut idx) in by_user {
        if idx.len() < 3 {
            split.excluded.insert(user.to_string(), idx.len());
            continue;
        }
        idx.sort_by_key(|&i| (reviews[i].timestamp, i));
        let n = idx.len();
        split.users.insert(
            user.to_string(),
            UserSplit {
                train: idx[..n - 2].iter().map(|&i| reviews[i].clone()).collect(),
                validation: reviews[idx[n - 2]].clone(),
                test: reviews[idx[n - 1]].clone(),
            },
        );
    }
    split
}

impl SplitSet {
    /// All training reviews, grouped by user in id order.
    pub fn train_reviews(&self) -> Vec<Review> {
        self.users.values().flat_map(|u| u.train.iter().cloned()).collect()
    }

    /// Which split each `(user, item)` interaction landed in.
    pub fn provenance(&self) -> HashMap<(String, String), Provenance> {
        let mut out = HashMap::new();
        for (user, s) in &self.users {
            for r in &s.train {
                out.insert((user.clone(), r.item_id.clone()), Provenance::Train);
            }
            out.insert((user.clone(), s.validation.item_id.clone()), Provenance::Validation);
            out.insert((user.clone(), s.test.item_id.clone()), Provenance::Test);
        }
        out
    }

    /// Training review count per user.
    pub fn user_train_counts(&self) -> BTreeMap<String, usize> {
        self.users.iter().map(|(u, s)| (u.clone(), s.train.len())).collect()
    }

    /// Training review count per item, over every item seen in any split.
    pub fn item_train_counts(&self) -> BTreeMap<String, usize> {
        let mut out: BTreeMap<String, usize> = BTreeMap::new();
        for s in self.users.values() {
            for r in &s.train {
                *out.entry(r.item_id.clone()).or_default() += 1;
            }
            out.entry(s.validation.item_id.clone()).or_default();
            out.entry(s.test.item_id.clone()).or_default();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn review(user: &str, item: &str, ts: i64) -> Review {
        Review { user_id: user.into(), item_id: item.into(), rating: 5, text: String::new(), timestamp: ts }
    }

    #[test]
    fn five_interactions() {
        let reviews: Vec<Review> = (1..=5).rev().map(|t| review("u", &format!("i{t}"), t)).collect();
        let s = loo_split(&reviews);
        let u = &s.users["u"];
        let train: Vec<i64> = u.train.iter().map(|r| r.timestamp).collect();
        assert_eq!(train, vec![1, 2, 3]);
        assert_eq!(u.validation.timestamp, 4);
        assert_eq!(u.test.timestamp, 5);
    }

    #[test]
    fn short_histories_are_excluded() {
        let s = loo_split(&[review("u", "a", 1), review("u", "b", 2)]);
        assert!(s.users.is_empty());
        assert_eq!(s.excluded["u"], 2);
    }

    #[test]
    fn equal_final_timestamps_use_file_order() {
        let s = loo_split(&[review("u", "a", 1), review("u", "b", 9), review("u", "c", 9)]);
        assert_eq!(s.users["u"].test.item_id, "c");
        assert_eq!(s.users["u"].validation.item_id, "b");
        let s = loo_split(&[review("u", "a", 1), review("u", "c", 9), review("u", "b", 9)]);
        assert_eq!(s.users["u"].test.item_id, "b");
    }
}
