//! Seeded synthetic corpora for tests, benchmarks and the `synth` command.
//!
//! [`keyword_corpus`] produces raw items and reviews whose texts hit the mock
//! provider's keyword rules, for exercising the offline pipeline end to end.
//!
//! [`separable_corpus`] produces fully derived artifacts with a planted
//! structure: every user follows one theme, every item carries personas
//! for several themes, and the user side describes a theme with different
//! words than the persona side. Only a trained head can relate the two.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{loo_split, CandidateSet, SplitSet};
use crate::pipeline::mock::CATEGORY_SLOT;
use crate::pipeline::{
    build_user_profile, AlignmentRecord, AspectCache, AspectSchema, AspectTuple, ItemMetadata, ItemSummary, MockConfig,
    PersonaRecord, PersonaSet, Provenance, Review, UserProfile,
};

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "su", "tor", "va", "zel", "pri", "dun", "ek", "fa", "gil", "ho", "ith", "jun", "mor",
    "nal", "ost", "pe", "qua", "ri", "sha", "tu", "ul", "vin", "wo", "xi", "yar", "zo",
];

fn word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("syllables")).collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

/// One candidate list per split user: the held-out test item plus
/// `negatives` items the user never interacted with, in random order.
pub fn sample_candidates(reviews: &[Review], item_ids: &[String], negatives: usize, seed: u64) -> Vec<CandidateSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates_from_split(&loo_split(reviews), item_ids, negatives, &mut rng)
}

fn candidates_from_split(
    split: &SplitSet,
    item_ids: &[String],
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<CandidateSet> {
    split
        .users
        .iter()
        .map(|(user, s)| {
            let history = s.history();
            let seen: BTreeSet<&str> =
                history.iter().map(|r| r.item_id.as_str()).chain([s.test.item_id.as_str()]).collect();
            let pool: Vec<&String> = item_ids.iter().filter(|i| !seen.contains(i.as_str())).collect();
            let mut list: Vec<String> = pool.choose_multiple(rng, negatives).map(|s| (*s).clone()).collect();
            list.insert(rng.random_range(0..=list.len()), s.test.item_id.clone());
            CandidateSet { user_id: user.clone(), candidates: list }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordCorpus {
    pub items: Vec<ItemMetadata>,
    pub reviews: Vec<Review>,
}

/// Items and reviews built from the mock's keyword lists. Review texts mix
/// slot keywords with filler so the extracted tuples vary from fully null
/// to fully populated, and item popularity is skewed so some items end up
/// with no reviews at all.
pub fn keyword_corpus(n_items: usize, n_reviews: usize, mock: &MockConfig, seed: u64) -> KeywordCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    let categories: Vec<&str> = ["Fantasy", "Romance", "Mystery", "History", "Science", "Cooking", "Children"].to_vec();
    let phrases: BTreeMap<&str, Vec<&str>> = mock
        .slot_rules
        .iter()
        .map(|(slot, rules)| (slot.as_str(), rules.iter().map(|r| r.keywords[0].as_str()).collect()))
        .collect();
    let filler = ["the pacing was fine", "arrived on time", "read it twice", "cover looks nice", "long chapters"];

    let items: Vec<ItemMetadata> = (0..n_items)
        .map(|i| {
            let title: Vec<String> = (0..rng.random_range(1..=3)).map(|_| word(&mut rng, &mut used)).collect();
            let title = title.join(" ");
            let description = if rng.random_bool(0.1) {
                String::new()
            } else {
                let cat = phrases[CATEGORY_SLOT].choose(&mut rng).expect("category keywords");
                format!("A {cat} story about {} and {}.", word(&mut rng, &mut used), word(&mut rng, &mut used))
            };
            let mut attributes = BTreeMap::new();
            attributes.insert("format".to_string(), ["hardcover", "paperback", "ebook"][i % 3].to_string());
            ItemMetadata {
                item_id: format!("item{i:04}"),
                title: title[..1].to_uppercase() + &title[1..],
                description,
                categories: vec![categories[i % categories.len()].to_string()],
                attributes,
            }
        })
        .collect();

    // Enough users that the distinct (user, item) pairs can cover n_reviews.
    let n_users = (n_reviews / 7).max(2 * n_reviews.div_ceil(n_items.max(1))).max(1);
    let n_reviews = if n_items == 0 { 0 } else { n_reviews };
    let mut reviews = Vec::with_capacity(n_reviews);
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    while reviews.len() < n_reviews {
        let user = rng.random_range(0..n_users);
        // Squaring a uniform draw skews toward low item indices, leaving a
        // tail of rarely or never reviewed items.
        let item = ((rng.random::<f64>().powi(2)) * n_items as f64) as usize;
        if !seen.insert((user, item)) {
            continue;
        }
        let mut parts: Vec<String> = Vec::new();
        for keywords in phrases.values() {
            if rng.random_bool(0.6) {
                parts.push(format!("I liked the {}", keywords.choose(&mut rng).expect("keywords")));
            }
        }
        if rng.random_bool(0.5) {
            parts.push(filler.choose(&mut rng).expect("filler").to_string());
        }
        parts.shuffle(&mut rng);
        let text = if rng.random_bool(0.05) { String::new() } else { parts.join(". ") };
        reviews.push(Review {
            user_id: format!("user{user:04}"),
            item_id: items[item].item_id.clone(),
            rating: rng.random_range(1..=5),
            text,
            timestamp: 1_600_000_000 + rng.random_range(0..50_000_000),
        });
    }
    KeywordCorpus { items, reviews }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeparableSpec {
    pub users: usize,
    pub items: usize,
    pub themes: usize,
    /// Personas per item, one theme each.
    pub personas_per_item: usize,
    /// Interactions per user, including validation and test.
    pub interactions_per_user: usize,
    /// Negatives added to the test target in each candidate list.
    pub negatives: usize,
    pub words_per_theme: usize,
    pub seed: u64,
}

impl Default for SeparableSpec {
    fn default() -> Self {
        Self {
            users: 200,
            items: 100,
            themes: 40,
            personas_per_item: 7,
            interactions_per_user: 8,
            negatives: 19,
            words_per_theme: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeparableCorpus {
    pub reviews: Vec<Review>,
    pub summaries: Vec<ItemSummary>,
    pub personas: Vec<PersonaSet>,
    /// Aspect tuples for training interactions only.
    pub aspects: AspectCache,
    /// Profiles over training interactions.
    pub profiles: HashMap<String, UserProfile>,
    /// Oracle judge output: the persona carrying the user's theme.
    pub alignment: Vec<AlignmentRecord>,
    pub candidates: Vec<CandidateSet>,
    pub user_theme: BTreeMap<String, usize>,
    /// Themes of each item, in persona order.
    pub item_themes: BTreeMap<String, Vec<usize>>,
}

/// See the module docs. Each item gets `personas_per_item` distinct themes;
/// each user draws a theme and interacts only with items carrying it.
pub fn separable_corpus(spec: &SeparableSpec) -> SeparableCorpus {
    assert!(spec.personas_per_item <= spec.themes, "more personas than themes");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut used = BTreeSet::new();
    let mut vocab = |rng: &mut ChaCha8Rng| -> Vec<Vec<String>> {
        (0..spec.themes).map(|_| (0..spec.words_per_theme).map(|_| word(rng, &mut used)).collect()).collect()
    };
    let persona_words = vocab(&mut rng);
    let user_words = vocab(&mut rng);

    let mut item_themes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut by_theme: Vec<Vec<String>> = vec![Vec::new(); spec.themes];
    let theme_ids: Vec<usize> = (0..spec.themes).collect();
    for i in 0..spec.items {
        let id = format!("s{i:03}");
        let themes: Vec<usize> = theme_ids.choose_multiple(&mut rng, spec.personas_per_item).copied().collect();
        for &t in &themes {
            by_theme[t].push(id.clone());
        }
        item_themes.insert(id, themes);
    }

    let summaries: Vec<ItemSummary> = item_themes
        .iter()
        .map(|(id, themes)| {
            let words: Vec<&str> = themes.iter().map(|&t| user_words[t][0].as_str()).collect();
            ItemSummary { item_id: id.clone(), text: format!("Volume {id} covering {}", words.join(" ")) }
        })
        .collect();
    let personas: Vec<PersonaSet> = item_themes
        .iter()
        .map(|(id, themes)| PersonaSet {
            item_id: id.clone(),
            personas: themes
                .iter()
                .map(|&t| {
                    let w = &persona_words[t];
                    PersonaRecord::new(
                        format!("The {} {}", w[0], w[1]),
                        format!("{} {} {}", w[0], w[1], w[2]),
                        format!("{} {} {}", w[2], w[3], w[0]),
                    )
                })
                .collect(),
        })
        .collect();

    let schema = AspectSchema::default();
    let mut reviews = Vec::new();
    let mut user_theme = BTreeMap::new();
    for u in 0..spec.users {
        let user = format!("v{u:03}");
        let eligible: Vec<usize> =
            (0..spec.themes).filter(|&t| by_theme[t].len() >= spec.interactions_per_user).collect();
        let theme = *eligible.choose(&mut rng).expect("a theme with enough items");
        user_theme.insert(user.clone(), theme);
        let picks: Vec<&String> = by_theme[theme].choose_multiple(&mut rng, spec.interactions_per_user).collect();
        for (k, item) in picks.into_iter().enumerate() {
            let w = &user_words[theme];
            let text = format!("{} {} {}", w[1], w[2], w[3]);
            reviews.push(Review {
                user_id: user.clone(),
                item_id: item.clone(),
                rating: 5,
                text,
                timestamp: 1000 + k as i64,
            });
        }
    }

    let split = loo_split(&reviews);
    let mut aspects = AspectCache::new();
    for r in split.train_reviews() {
        let theme = user_theme[&r.user_id];
        let mut t = AspectTuple::all_null(&r.user_id, &r.item_id, &schema);
        t.slots.insert(CATEGORY_SLOT.to_string(), Some(r.text.clone()));
        t.slots.insert("usage_context".to_string(), Some(user_words[theme][0].clone()));
        t.split = Some(Provenance::Train);
        aspects.insert((r.user_id.clone(), r.item_id.clone()), t);
    }
    let summary_by_id: HashMap<&str, &ItemSummary> = summaries.iter().map(|s| (s.item_id.as_str(), s)).collect();
    let mut profiles = HashMap::new();
    let mut alignment = Vec::new();
    for (user, s) in &split.users {
        let interactions: Vec<(Review, ItemSummary)> =
            s.train.iter().map(|r| (r.clone(), summary_by_id[r.item_id.as_str()].clone())).collect();
        profiles
            .insert(user.clone(), build_user_profile(user, &interactions, &aspects, 10).expect("non-empty history"));
        let theme = user_theme[user];
        for r in &s.train {
            let idx = item_themes[&r.item_id].iter().position(|&t| t == theme).expect("item carries the theme");
            alignment.push(AlignmentRecord {
                user_id: user.clone(),
                item_id: r.item_id.clone(),
                persona_index: idx,
                justification: format!("shares theme {theme}"),
                split: Some(Provenance::Train),
            });
        }
    }

    let all_items: Vec<String> = item_themes.keys().cloned().collect();
    let candidates = candidates_from_split(&split, &all_items, spec.negatives, &mut rng);

    SeparableCorpus { reviews, summaries, personas, aspects, profiles, alignment, candidates, user_theme, item_themes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_corpus_is_seeded() {
        let mock = MockConfig::default();
        let a = keyword_corpus(20, 100, &mock, 3);
        assert_eq!(a, keyword_corpus(20, 100, &mock, 3));
        assert_ne!(a, keyword_corpus(20, 100, &mock, 4));
        assert_eq!(a.items.len(), 20);
        assert_eq!(a.reviews.len(), 100);
    }

    #[test]
    fn separable_corpus_shape() {
        let spec = SeparableSpec { users: 30, items: 40, ..Default::default() };
        let c = separable_corpus(&spec);
        assert_eq!(c.personas.len(), 40);
        assert!(c.personas.iter().all(|p| p.personas.len() == 7 && p.has_unique_names()));
        assert_eq!(c.candidates.len(), 30);
        assert!(c.candidates.iter().all(|c| c.candidates.len() == 20));
        for r in &c.alignment {
            let themes = &c.item_themes[&r.item_id];
            assert_eq!(themes[r.persona_index], c.user_theme[&r.user_id]);
        }
    }
}
