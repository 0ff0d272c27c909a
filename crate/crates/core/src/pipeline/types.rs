use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMetadata {
    pub item_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl ItemMetadata {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.item_id.is_empty() {
            return Err(PipelineError::InvalidRecord("item_id must be non-empty".into()));
        }
        if self.title.trim().is_empty() {
            return Err(PipelineError::InvalidRecord(format!("item {} has an empty title", self.item_id)));
        }
        Ok(())
    }
}

/// Rejects duplicate ids and invalid rows.
pub fn validate_corpus(items: &[ItemMetadata]) -> Result<(), PipelineError> {
    let mut seen = HashSet::new();
    for item in items {
        item.validate()?;
        if !seen.insert(item.item_id.as_str()) {
            return Err(PipelineError::InvalidRecord(format!("duplicate item_id {}", item.item_id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    #[serde(default)]
    pub text: String,
    pub timestamp: i64,
}

impl Review {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(1..=5).contains(&self.rating) {
            return Err(PipelineError::InvalidRecord(format!(
                "review ({}, {}) has rating {} outside 1..=5",
                self.user_id, self.item_id, self.rating
            )));
        }
        if self.timestamp < 0 {
            return Err(PipelineError::InvalidRecord(format!(
                "review ({}, {}) has a negative timestamp",
                self.user_id, self.item_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub item_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectSchema {
    pub slots: Vec<String>,
}

impl AspectSchema {
    pub fn new<S: Into<String>>(slots: impl IntoIterator<Item = S>) -> Result<Self, PipelineError> {
        let slots: Vec<String> = slots.into_iter().map(Into::into).collect();
        if slots.is_empty() {
            return Err(PipelineError::InvalidSchema("schema needs at least one slot".into()));
        }
        let mut seen = HashSet::new();
        for s in &slots {
            if !seen.insert(s.as_str()) {
                return Err(PipelineError::InvalidSchema(format!("duplicate slot {s}")));
            }
        }
        Ok(Self { slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

impl Default for AspectSchema {
    fn default() -> Self {
        Self {
            slots: ["category_preference", "purchase_purpose", "quality_criteria", "usage_context"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// Which split a derived record came from; scoring refuses to read records
/// derived from held-out interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Train,
    Validation,
    Test,
    Online,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectTuple {
    pub user_id: String,
    pub item_id: String,
    pub slots: BTreeMap<String, Option<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Provenance>,
}

impl AspectTuple {
    pub fn all_null(user_id: &str, item_id: &str, schema: &AspectSchema) -> Self {
        Self {
            user_id: user_id.to_string(),
            item_id: item_id.to_string(),
            slots: schema.slots.iter().map(|s| (s.clone(), None)).collect(),
            split: None,
        }
    }

    pub fn null_count(&self) -> usize {
        self.slots.values().filter(|v| v.is_none()).count()
    }

    pub fn null_fraction(&self) -> f64 {
        if self.slots.is_empty() {
            return 1.0;
        }
        self.null_count() as f64 / self.slots.len() as f64
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        self.slots.get(slot).and_then(|v| v.as_deref())
    }

    /// Present slots as `slot: value` lines, in slot-name order.
    pub fn to_text(&self) -> String {
        self.slots.iter().filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}: {v}"))).collect::<Vec<_>>().join("\n")
    }

    pub fn conforms_to(&self, schema: &AspectSchema) -> bool {
        self.slots.len() == schema.len()
            && schema.slots.iter().all(|s| self.slots.contains_key(s))
            && self.slots.values().flatten().all(|v| !v.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaRecord {
    pub name: String,
    pub description: String,
    pub rationale: String,
}

impl PersonaRecord {
    pub fn new(name: impl Into<String>, description: impl Into<String>, rationale: impl Into<String>) -> Self {
        Self { name: name.into(), description: description.into(), rationale: rationale.into() }
    }

    pub fn is_complete(&self) -> bool {
        [&self.name, &self.description, &self.rationale].iter().all(|f| !f.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSet {
    pub item_id: String,
    pub personas: Vec<PersonaRecord>,
}

impl PersonaSet {
    /// Items without personas are scored through their summary.
    pub fn is_summary_only(&self) -> bool {
        self.personas.is_empty()
    }

    pub fn has_unique_names(&self) -> bool {
        let mut seen = HashSet::new();
        self.personas.iter().all(|p| seen.insert(p.name.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub item_id: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect: Option<AspectTuple>,
    pub timestamp: i64,
}

/// Recent history, most recent first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub entries: Vec<ProfileEntry>,
}

impl UserProfile {
    /// Concatenated summary and aspect text, as shown to the judge.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| match &e.aspect {
                Some(a) if a.null_count() < a.slots.len() => format!("{}\n{}", e.summary, a.to_text()),
                _ => e.summary.clone(),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub user_id: String,
    pub item_id: String,
    pub persona_index: usize,
    pub justification: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Provenance>,
}
