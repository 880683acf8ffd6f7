//! Per-type entity surface pool with seed/generated provenance.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EntitySchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seed,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub surface: String,
    pub provenance: Provenance,
}

/// How surfaces are compared for de-duplication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Exact,
    #[default]
    Casefold,
}

/// Trims and collapses internal whitespace; `Casefold` also lowercases.
pub fn normalize_surface(surface: &str, normalization: Normalization) -> String {
    let collapsed = surface.split_whitespace().collect::<Vec<_>>().join(" ");
    match normalization {
        Normalization::Exact => collapsed,
        Normalization::Casefold => collapsed.to_lowercase(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("entity type {0:?} is not in the schema")]
    UnknownType(String),
    #[error("pool JSON: {0}")]
    Json(String),
}

/// Entity surfaces per schema type. Insertion order is kept; the first-seen
/// surface form wins when two surfaces normalize to the same key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityPool {
    normalization: Normalization,
    entries: IndexMap<String, Vec<PoolEntry>>,
    keys: IndexMap<String, HashSet<String>>,
}

impl EntityPool {
    pub fn new(schema: &EntitySchema, normalization: Normalization) -> Self {
        Self {
            normalization,
            entries: schema.names().map(|n| (n.to_string(), Vec::new())).collect(),
            keys: schema.names().map(|n| (n.to_string(), HashSet::new())).collect(),
        }
    }

    /// Pool seeded with every entity mention of the corpus.
    pub fn from_corpus(corpus: &Corpus, normalization: Normalization) -> Self {
        let mut pool = Self::new(corpus.schema(), normalization);
        for s in corpus.sentences() {
            for span in s.spans() {
                pool.insert(&span.entity_type, &span.surface, Provenance::Seed)
                    .expect("corpus types are in its schema");
            }
        }
        pool
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn key(&self, surface: &str) -> String {
        normalize_surface(surface, self.normalization)
    }

    /// Adds a surface; returns `Ok(false)` when it is empty or already known.
    pub fn insert(
        &mut self,
        entity_type: &str,
        surface: &str,
        provenance: Provenance,
    ) -> Result<bool, PoolError> {
        let key = self.key(surface);
        let keys = self
            .keys
            .get_mut(entity_type)
            .ok_or_else(|| PoolError::UnknownType(entity_type.to_string()))?;
        if key.is_empty() || !keys.insert(key) {
            return Ok(false);
        }
        self.entries[entity_type].push(PoolEntry {
            surface: surface.split_whitespace().collect::<Vec<_>>().join(" "),
            provenance,
        });
        Ok(true)
    }

    pub fn contains(&self, entity_type: &str, surface: &str) -> bool {
        self.keys
            .get(entity_type)
            .is_some_and(|k| k.contains(&self.key(surface)))
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self, entity_type: &str) -> &[PoolEntry] {
        self.entries.get(entity_type).map_or(&[], Vec::as_slice)
    }

    pub fn surfaces(&self, entity_type: &str) -> Vec<String> {
        self.entries(entity_type)
            .iter()
            .map(|e| e.surface.clone())
            .collect()
    }

    /// `(type, entry)` pairs in type order, then insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &PoolEntry)> {
        self.entries
            .iter()
            .flat_map(|(ty, es)| es.iter().map(move |e| (ty.as_str(), e)))
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("pool serializes")
    }

    /// Loads `{type: [{surface, provenance}]}`. Types missing from the file
    /// start empty; duplicates under `normalization` are dropped.
    pub fn from_json(
        text: &str,
        schema: &EntitySchema,
        normalization: Normalization,
    ) -> Result<Self, PoolError> {
        let raw: IndexMap<String, Vec<PoolEntry>> =
            serde_json::from_str(text).map_err(|e| PoolError::Json(e.to_string()))?;
        let mut pool = Self::new(schema, normalization);
        for (ty, entries) in raw {
            for e in entries {
                pool.insert(&ty, &e.surface, e.provenance)?;
            }
        }
        Ok(pool)
    }
}
