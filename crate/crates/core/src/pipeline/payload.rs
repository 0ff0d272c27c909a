//! JSON payloads embedded in prompts and the completion shapes expected back.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PersonaRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizePayload {
    pub title: String,
    pub description: String,
    pub categories: Vec<String>,
    pub attributes: BTreeMap<String, String>,
    pub max_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectsPayload {
    pub review: String,
    pub rating: u8,
    pub schema: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonasPayload {
    pub summary: String,
    pub aspects: Vec<BTreeMap<String, Option<String>>>,
    pub min_personas: usize,
    pub max_personas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonasCompletion {
    pub personas: Vec<PartialPersona>,
}

/// Persona as returned by a provider, before field validation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PartialPersona {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub rationale: Option<String>,
}

impl PartialPersona {
    pub fn complete(self) -> Option<PersonaRecord> {
        let non_empty = |s: Option<String>| s.filter(|v| !v.trim().is_empty());
        Some(PersonaRecord {
            name: non_empty(self.name)?,
            description: non_empty(self.description)?,
            rationale: non_empty(self.rationale)?,
        })
    }
}

impl From<PersonaRecord> for PartialPersona {
    fn from(p: PersonaRecord) -> Self {
        Self { name: Some(p.name), description: Some(p.description), rationale: Some(p.rationale) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedPersona {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignPayload {
    pub profile: String,
    pub title: String,
    pub personas: Vec<IndexedPersona>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignCompletion {
    pub persona_index: i64,
    #[serde(default)]
    pub justification: String,
}
