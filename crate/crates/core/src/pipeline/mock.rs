//! Deterministic stand-in for the LLM.
//!
//! * summaries: title plus the first 200 characters of the description
//! * aspects: a slot is filled iff the review contains one of the slot's keywords
//! * personas: one per distinct `category_preference` value in the pool,
//!   padded to two with a summary-derived persona; more than `max_personas`
//!   groups are only merged when the prompt carries a correction
//! * judge: the persona with the largest content-token overlap with the
//!   profile, lowest index on ties
//!
//! Outputs depend only on `(prompt, template_id)` and the mock configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::llm::{LlmProvider, ProviderError};
use super::payload::{
    AlignCompletion, AlignPayload, AspectsPayload, PartialPersona, PersonasCompletion, PersonasPayload,
    SummarizePayload,
};
use super::prompts::{extract_json_block, ALIGN, ASPECTS, PERSONAS, SUMMARIZE};
use super::PersonaRecord;
use crate::text::{content_tokens, tokenize, truncate_chars};

type Slots = BTreeMap<String, Option<String>>;

pub const CATEGORY_SLOT: &str = "category_preference";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordRule {
    pub keywords: Vec<String>,
    pub value: String,
}

/// Persona template keyed by a `category_preference` value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archetype {
    pub category: String,
    pub name: String,
    pub description: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockConfig {
    pub description_chars: usize,
    /// Slot name to ordered rules; the first matching rule fills the slot.
    pub slot_rules: BTreeMap<String, Vec<KeywordRule>>,
    pub archetypes: Vec<Archetype>,
}

fn rule(keywords: &[&str], value: &str) -> KeywordRule {
    KeywordRule { keywords: keywords.iter().map(|k| k.to_string()).collect(), value: value.into() }
}

fn archetype(category: &str, name: &str, description: &str, rationale: &str) -> Archetype {
    Archetype {
        category: category.into(),
        name: name.into(),
        description: description.into(),
        rationale: rationale.into(),
    }
}

impl Default for MockConfig {
    fn default() -> Self {
        let mut slot_rules = BTreeMap::new();
        slot_rules.insert(
            CATEGORY_SLOT.to_string(),
            vec![
                rule(&["dark", "gothic", "retelling", "retellings", "sinister"], "Dark fantasy, gothic retellings"),
                rule(&["romance", "romantic", "love"], "Romance, heartfelt love stories"),
                rule(&["mystery", "detective", "whodunit", "crime"], "Mystery, detective fiction"),
                rule(&["historical", "history", "war"], "Historical fiction"),
                rule(&["science", "space", "scifi", "future"], "Science fiction, speculative futures"),
                rule(&["cookbook", "recipes", "cooking"], "Cooking, practical recipe collections"),
                rule(&["children", "kids", "toddler"], "Children's picture books"),
                rule(&["biography", "memoir"], "Biography, memoir"),
                rule(&["magic", "dragons", "quest"], "Epic fantasy, magic and quests"),
                rule(&["poetry", "poems", "verse"], "Poetry, lyrical verse"),
            ],
        );
        slot_rules.insert(
            "purchase_purpose".to_string(),
            vec![
                rule(
                    &["fairy tale", "fairy tales", "classic", "reinterpretation"],
                    "Interest in morally complex reinterpretations of classic fairy tales",
                ),
                rule(&["gift", "present"], "Buying as a gift"),
                rule(&["learn", "learning", "study", "research"], "Learning and self-education"),
                rule(&["escape", "relax", "unwind"], "Escapism and relaxation"),
                rule(&["book club", "club"], "Book club discussion"),
            ],
        );
        slot_rules.insert(
            "quality_criteria".to_string(),
            vec![
                rule(
                    &["twist", "twists", "tension", "suspense", "ambiguous"],
                    "Tension, surprising twists, and morally ambiguous characters",
                ),
                rule(&["prose", "writing", "written"], "Elegant, well-crafted prose"),
                rule(&["characters", "character"], "Memorable, well-developed characters"),
                rule(&["accurate", "accuracy", "researched", "detail"], "Accuracy and attention to detail"),
                rule(&["pacing", "pace", "pages"], "Brisk pacing"),
            ],
        );
        slot_rules.insert(
            "usage_context".to_string(),
            vec![
                rule(&["reading", "leisure", "weekend"], "Immersive reading during leisure hours"),
                rule(&["commute", "train", "bus"], "Reading on the commute"),
                rule(&["bedtime", "night"], "Bedtime reading"),
                rule(&["kitchen", "dinner"], "Cooking at home"),
                rule(&["vacation", "holiday", "beach"], "Vacation reading"),
            ],
        );
        let archetypes = vec![
            archetype(
                "Dark fantasy, gothic retellings",
                "The Dark Storyline Seeker",
                "A reader who wants suspense, moral complexity and flawed characters with uncertain motives, and who prefers stories that unsettle over stories that comfort.",
                "This persona appreciates this item because they enjoy a darker storyline with surprises and morally questionable characters, echoed by reviews that dwell on the tension and danger of the plot.",
            ),
            archetype(
                "Romance, heartfelt love stories",
                "The Romantic Heart",
                "A reader who follows relationships first and plot second, and who wants emotional payoff.",
                "This persona appreciates this item for its love story and the warmth reviewers describe.",
            ),
            archetype(
                "Mystery, detective fiction",
                "The Armchair Detective",
                "A reader who likes to solve the puzzle before the reveal and values fair clues.",
                "This persona appreciates this item for its mystery and the clever detective work reviewers mention.",
            ),
            archetype(
                "Historical fiction",
                "The History Buff",
                "A reader who wants the past rendered vividly and with care for period detail.",
                "This persona appreciates this item for its historical setting, which reviewers call convincing.",
            ),
            archetype(
                "Science fiction, speculative futures",
                "The Future Dreamer",
                "A reader drawn to big ideas about science, space and where society is heading.",
                "This persona appreciates this item for its speculative science and vision of the future.",
            ),
            archetype(
                "Cooking, practical recipe collections",
                "The Home Cook",
                "A practical cook who wants reliable recipes for everyday meals.",
                "This persona appreciates this item for recipes that reviewers actually cooked at home.",
            ),
            archetype(
                "Children's picture books",
                "The Bedtime Storyteller",
                "A parent or carer choosing books to read aloud with children.",
                "This persona appreciates this item because children respond to it, as reviewers report.",
            ),
            archetype(
                "Biography, memoir",
                "The Life Story Reader",
                "A reader curious about real lives, told candidly.",
                "This persona appreciates this item for the memoir's honesty that reviewers highlight.",
            ),
            archetype(
                "Epic fantasy, magic and quests",
                "The Quest Adventurer",
                "A reader who loves magic systems, dragons and long quests across invented worlds.",
                "This persona appreciates this item for the magic and the quest at its center.",
            ),
            archetype(
                "Poetry, lyrical verse",
                "The Verse Lover",
                "A reader who savors language and reads slowly for rhythm and image.",
                "This persona appreciates this item for poems whose lines reviewers quote back.",
            ),
        ];
        Self { description_chars: 200, slot_rules, archetypes }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockLlm {
    config: MockConfig,
}

impl MockLlm {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    fn summarize(&self, p: SummarizePayload) -> String {
        let desc = truncate_chars(p.description.trim(), self.config.description_chars).trim_end();
        if desc.is_empty() {
            p.title
        } else {
            format!("{}: {}", p.title, desc)
        }
    }

    /// First rule of the slot whose keyword phrase occurs in `text`.
    pub fn match_slot(&self, slot: &str, text: &str) -> Option<String> {
        let tokens = tokenize(text);
        self.config
            .slot_rules
            .get(slot)?
            .iter()
            .find_map(|r| r.keywords.iter().any(|k| contains_phrase(&tokens, &tokenize(k))).then(|| r.value.clone()))
    }

    fn aspects(&self, p: AspectsPayload) -> String {
        let slots: BTreeMap<&str, Option<String>> =
            p.schema.iter().map(|s| (s.as_str(), self.match_slot(s, &p.review))).collect();
        serde_json::to_string(&slots).expect("aspect json")
    }

    fn persona_for(&self, category: Option<&str>, tuples: &[&BTreeMap<String, Option<String>>]) -> PersonaRecord {
        let cues: Vec<String> = {
            let mut seen = Vec::new();
            for t in tuples {
                for (slot, value) in t.iter() {
                    if slot == CATEGORY_SLOT {
                        continue;
                    }
                    if let Some(v) = value {
                        if !seen.contains(v) {
                            seen.push(v.clone());
                        }
                    }
                }
            }
            seen
        };
        let cue_text = if cues.is_empty() { String::new() } else { format!(" Review cues: {}.", cues.join("; ")) };
        match category {
            Some(cat) => match self.config.archetypes.iter().find(|a| a.category == cat) {
                Some(a) => {
                    PersonaRecord::new(a.name.clone(), a.description.clone(), format!("{}{}", a.rationale, cue_text))
                }
                None => {
                    let head = cat.split(|c: char| !c.is_alphanumeric()).find(|w| !w.is_empty()).unwrap_or("Niche");
                    PersonaRecord::new(
                        format!("The {} Enthusiast", capitalize(head)),
                        format!("A reader who seeks out {}.", cat.to_lowercase()),
                        format!("This persona appreciates this item for its {}.{}", cat.to_lowercase(), cue_text),
                    )
                }
            },
            None => PersonaRecord::new(
                "The Casual Browser",
                "A reader without a fixed genre who follows recommendations and word of mouth.",
                format!("This persona appreciates this item for its general appeal.{cue_text}"),
            ),
        }
    }

    fn summary_persona(summary: &str) -> PersonaRecord {
        let premise = truncate_chars(summary, 160);
        PersonaRecord::new(
            "The Curious Newcomer",
            format!("A reader who picks items on the strength of their premise: {premise}"),
            format!("This persona appreciates this item for what it is at its core: {premise}"),
        )
    }

    fn personas(&self, p: PersonasPayload) -> String {
        // Groups keyed by category value, in order of first appearance.
        let mut groups: Vec<(Option<String>, Vec<&Slots>)> = Vec::new();
        for t in &p.aspects {
            let cat = t.get(CATEGORY_SLOT).cloned().flatten();
            match groups.iter_mut().find(|(c, _)| *c == cat) {
                Some((_, members)) => members.push(t),
                None => groups.push((cat, vec![t])),
            }
        }
        if p.correction.is_some() {
            merge_smallest_groups(&mut groups, p.max_personas.max(1));
        }
        let mut personas: Vec<PersonaRecord> =
            groups.iter().map(|(cat, members)| self.persona_for(cat.as_deref(), members)).collect();
        if !p.aspects.is_empty() && personas.len() < p.min_personas {
            personas.push(Self::summary_persona(&p.summary));
        }
        dedupe_names(&mut personas);
        let completion = PersonasCompletion { personas: personas.into_iter().map(PartialPersona::from).collect() };
        serde_json::to_string(&completion).expect("persona json")
    }

    fn align(&self, p: AlignPayload) -> String {
        let texts: Vec<&str> = p.personas.iter().map(|x| x.text.as_str()).collect();
        let (pos, justification) = overlap_judge(&p.profile, &texts);
        let index = p.personas.get(pos).map_or(0, |x| x.index);
        let completion = AlignCompletion { persona_index: index as i64, justification };
        serde_json::to_string(&completion).expect("align json")
    }
}

/// Position of the persona text sharing the most distinct content tokens
/// with `profile` (lowest position on ties), plus a short justification.
pub fn overlap_judge(profile: &str, personas: &[&str]) -> (usize, String) {
    let profile = content_tokens(profile);
    let mut best: (usize, Vec<String>) = (0, Vec::new());
    for (pos, text) in personas.iter().enumerate() {
        let shared: Vec<String> = content_tokens(text).intersection(&profile).cloned().collect();
        if pos == 0 || shared.len() > best.1.len() {
            best = (pos, shared);
        }
    }
    let justification = if best.1.is_empty() {
        "No shared cues between the profile and any persona; defaulting to the first persona.".to_string()
    } else {
        let cues: Vec<&str> = best.1.iter().take(6).map(String::as_str).collect();
        format!("The profile shares cues with this persona: {}.", cues.join(", "))
    };
    (best.0, justification)
}

/// Repeatedly fold the smallest group (latest on ties) into the next
/// smallest remaining group (latest on ties) until at most `max` remain.
pub(crate) fn merge_smallest_groups<K, V>(groups: &mut Vec<(K, Vec<V>)>, max: usize) {
    fn smallest<K, V>(groups: &[(K, Vec<V>)]) -> usize {
        let mut best = 0;
        for (i, g) in groups.iter().enumerate() {
            if g.1.len() <= groups[best].1.len() {
                best = i;
            }
        }
        best
    }
    while groups.len() > max {
        let donor = groups.remove(smallest(groups));
        let target = smallest(groups);
        groups[target].1.extend(donor.1);
    }
}

fn dedupe_names(personas: &mut [PersonaRecord]) {
    for i in 1..personas.len() {
        let base = personas[i].name.clone();
        let mut n = 2;
        while personas[..i].iter().any(|p| p.name == personas[i].name) {
            personas[i].name = format!("{base} ({n})");
            n += 1;
        }
    }
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars.flat_map(char::to_lowercase)).collect(),
        None => String::new(),
    }
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

fn parse<T: for<'de> Deserialize<'de>>(prompt: &str) -> Result<T, ProviderError> {
    serde_json::from_str(extract_json_block(prompt))
        .map_err(|e| ProviderError::BadResponse(format!("mock could not read prompt payload: {e}")))
}

impl LlmProvider for MockLlm {
    fn complete(&self, prompt: &str, template_id: &str) -> Result<String, ProviderError> {
        match template_id {
            SUMMARIZE => Ok(self.summarize(parse(prompt)?)),
            ASPECTS => Ok(self.aspects(parse(prompt)?)),
            PERSONAS => Ok(self.personas(parse(prompt)?)),
            ALIGN => Ok(self.align(parse(prompt)?)),
            other => Err(ProviderError::Status { code: 400, body: format!("unknown template {other}") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_order_is_deterministic() {
        // Sizes 5,4,3,1,1,1,1,1,1 (nine groups) down to seven.
        let mut groups: Vec<(char, Vec<u8>)> = vec![
            ('a', vec![0; 5]),
            ('b', vec![0; 4]),
            ('c', vec![0; 3]),
            ('d', vec![1]),
            ('e', vec![2]),
            ('f', vec![3]),
            ('g', vec![4]),
            ('h', vec![5]),
            ('i', vec![6]),
        ];
        merge_smallest_groups(&mut groups, 7);
        // i folds into h, then g folds into f.
        let keys: Vec<char> = groups.iter().map(|g| g.0).collect();
        assert_eq!(keys, vec!['a', 'b', 'c', 'd', 'e', 'f', 'h']);
        assert_eq!(groups[5].1, vec![3, 4]);
        assert_eq!(groups[6].1, vec![5, 6]);
    }

    #[test]
    fn names_are_deduplicated() {
        let mut p = vec![
            PersonaRecord::new("A", "d", "r"),
            PersonaRecord::new("A", "d", "r"),
            PersonaRecord::new("A", "d", "r"),
        ];
        dedupe_names(&mut p);
        let names: Vec<_> = p.iter().map(|x| x.name.as_str()).collect();
        assert_eq!(names, ["A", "A (2)", "A (3)"]);
    }

    #[test]
    fn phrase_matching_needs_contiguous_tokens() {
        let m = MockLlm::default();
        assert!(m.match_slot("purchase_purpose", "a fairy tale for adults").is_some());
        assert!(m.match_slot("purchase_purpose", "a fairy and a tale").is_none());
    }
}
