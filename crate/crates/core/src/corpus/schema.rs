use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::valid_surface;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityType {
    pub name: String,
    #[serde(default)]
    pub domain_specific: bool,
}

impl EntityType {
    pub fn new(name: impl Into<String>, domain_specific: bool) -> Self {
        Self {
            name: name.into(),
            domain_specific,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("schema declares no entity types")]
    Empty,
    #[error("invalid entity type name {0:?}")]
    InvalidName(String),
    #[error("entity type {0:?} declared twice")]
    Duplicate(String),
    #[error("schema line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("schema JSON: {0}")]
    Json(String),
}

/// The ordered entity-type set of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<EntityType>", into = "Vec<EntityType>")]
pub struct EntitySchema {
    types: Vec<EntityType>,
}

impl TryFrom<Vec<EntityType>> for EntitySchema {
    type Error = SchemaError;

    fn try_from(types: Vec<EntityType>) -> Result<Self, Self::Error> {
        EntitySchema::new(types)
    }
}

impl From<EntitySchema> for Vec<EntityType> {
    fn from(s: EntitySchema) -> Self {
        s.types
    }
}

impl EntitySchema {
    pub fn new(types: Vec<EntityType>) -> Result<Self, SchemaError> {
        if types.is_empty() {
            return Err(SchemaError::Empty);
        }
        let schema = Self::unchecked_nonempty(types)?;
        if !schema.types.iter().any(|t| t.domain_specific) {
            log::warn!("schema marks no entity type as domain-specific");
        }
        Ok(schema)
    }

    /// Schema inferred from tags. May be empty (for an empty corpus); no
    /// type is marked domain-specific.
    pub fn inferred<I, S>(names: I) -> Result<Self, SchemaError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::unchecked_nonempty(
            names
                .into_iter()
                .map(|n| EntityType::new(n, false))
                .collect(),
        )
    }

    fn unchecked_nonempty(types: Vec<EntityType>) -> Result<Self, SchemaError> {
        let mut seen = HashSet::new();
        for t in &types {
            if !valid_surface(&t.name) {
                return Err(SchemaError::InvalidName(t.name.clone()));
            }
            if !seen.insert(t.name.as_str()) {
                return Err(SchemaError::Duplicate(t.name.clone()));
            }
        }
        Ok(Self { types })
    }

    /// Reads either a JSON list of `{name, domain_specific}` objects or a
    /// plain text file with one type per line. In the text form a line may
    /// carry a second field `domain_specific` (or `*`); `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('[') {
            let types: Vec<EntityType> =
                serde_json::from_str(trimmed).map_err(|e| SchemaError::Json(e.to_string()))?;
            return Self::new(types);
        }
        let mut types = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let name = fields.next().unwrap_or_default();
            let domain_specific = match fields.next() {
                None => false,
                Some("domain_specific") | Some("*") => true,
                Some(other) => {
                    return Err(SchemaError::Syntax {
                        line: i + 1,
                        message: format!("unexpected flag {other:?}"),
                    })
                }
            };
            if fields.next().is_some() {
                return Err(SchemaError::Syntax {
                    line: i + 1,
                    message: "too many fields".into(),
                });
            }
            types.push(EntityType::new(name, domain_specific));
        }
        Self::new(types)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.types).expect("schema serializes")
    }

    pub fn types(&self) -> &[EntityType] {
        &self.types
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.types.iter().map(|t| t.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&EntityType> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn is_domain_specific(&self, name: &str) -> bool {
        self.get(name).is_some_and(|t| t.domain_specific)
    }

    pub fn domain_specific(&self) -> impl Iterator<Item = &EntityType> {
        self.types.iter().filter(|t| t.domain_specific)
    }

    pub fn has_domain_specific(&self) -> bool {
        self.domain_specific().next().is_some()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }
}
