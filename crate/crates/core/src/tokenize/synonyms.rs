use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

pub type ConceptId = usize;

/// Concept → language → surface forms. JSON: `{concept: {lang: [forms]}}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SynonymTable {
    entries: BTreeMap<ConceptId, BTreeMap<String, Vec<String>>>,
}

impl SynonymTable {
    pub fn insert(&mut self, concept: ConceptId, lang: &str, forms: Vec<String>) {
        self.entries.entry(concept).or_default().insert(lang.to_string(), forms);
    }

    pub fn concept(&self, concept: ConceptId) -> Option<&BTreeMap<String, Vec<String>>> {
        self.entries.get(&concept)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ConceptId, &BTreeMap<String, Vec<String>>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every language tag appearing anywhere in the table.
    pub fn languages(&self) -> BTreeSet<String> {
        self.entries.values().flat_map(|m| m.keys().cloned()).collect()
    }

    /// Checks that every present (concept, language) has at least one
    /// non-empty form and that all languages belong to `declared`.
    pub fn validate(&self, declared: &[String]) -> Result<()> {
        for (c, langs) in &self.entries {
            for (lang, forms) in langs {
                if !declared.iter().any(|d| d == lang) {
                    return Err(Error::input(format!(
                        "synonym table: concept {c} uses undeclared language {lang:?}"
                    )));
                }
                if forms.is_empty() || forms.iter().any(|f| f.trim().is_empty()) {
                    return Err(Error::input(format!(
                        "synonym table: concept {c}, language {lang:?} has an empty form list or form"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
