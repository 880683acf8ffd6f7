//! LLM-driven expansion of the entity pool.
//!
//! The straightforward strategy puts every known surface of a type into one
//! prompt. The iterative strategy splits the known surfaces into batches of
//! `batch_size`, issues one prompt per batch, and feeds accepted surfaces
//! back as examples for the following rounds.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EntitySchema, EntityType};
use crate::llm::{Completer, LlmError};
use crate::pool::{normalize_surface, EntityPool, Normalization, Provenance};
use crate::prompt::{render, PromptTemplates};
use crate::record::{GenerationRecord, Stage, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Straightforward,
    #[default]
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntityAugConfig {
    /// New entities wanted per type.
    pub n_new: usize,
    pub strategy: Strategy,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub normalization: Normalization,
    /// Augment every schema type instead of only domain-specific ones.
    pub all_types: bool,
}

impl Default for EntityAugConfig {
    fn default() -> Self {
        Self {
            n_new: 10,
            strategy: Strategy::Iterative,
            batch_size: 5,
            max_rounds: 3,
            normalization: Normalization::Casefold,
            all_types: false,
        }
    }
}

impl EntityAugConfig {
    pub fn validate(&self) -> Result<(), EntityAugError> {
        if self.batch_size < 1 {
            return Err(EntityAugError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.max_rounds < 1 {
            return Err(EntityAugError::InvalidConfig("max_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntityAugError {
    #[error("invalid entity augmentation config: {0}")]
    InvalidConfig(String),
    #[error("no example entities to build a prompt from")]
    NoExamples,
    #[error("entity count must be >= 1")]
    ZeroCount,
    #[error("entity type {0:?} has no seed entities in the pool")]
    NoSeedEntities(String),
    #[error("backend failed for prompt {prompt:?}: {source}")]
    Backend {
        prompt: String,
        #[source]
        source: LlmError,
    },
    #[error("no entities could be parsed from the response to {prompt:?}")]
    EmptyResponse { prompt: String, raw: String },
}

pub fn render_entity_prompt<S: AsRef<str>>(
    templates: &PromptTemplates,
    entity_type: &EntityType,
    examples: &[S],
    n: usize,
) -> Result<String, EntityAugError> {
    if examples.is_empty() {
        return Err(EntityAugError::NoExamples);
    }
    if n == 0 {
        return Err(EntityAugError::ZeroCount);
    }
    let joined = examples
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(", ");
    let n = n.to_string();
    Ok(render(
        &templates.entity,
        &[
            ("domain", templates.domain.as_str()),
            ("type", entity_type.name.as_str()),
            ("examples", joined.as_str()),
            ("n", n.as_str()),
        ],
    ))
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Splits a model response into entity surfaces: one per line or
/// comma-separated item, with list markers (`1.`, `2)`, `-`, `*`, bullets)
/// and surrounding quotes removed.
pub fn parse_entity_response(raw: &str) -> Vec<String> {
    raw.lines()
        .flat_map(|line| strip_list_marker(line.trim()).split(','))
        .map(|item| item.trim().trim_matches(QUOTES).trim())
        .filter(|item| !item.is_empty())
        .map(|item| item.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect()
}

fn strip_list_marker(line: &str) -> &str {
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
        return line;
    }
    for marker in ["- ", "* ", "\u{2022}"] {
        if let Some(r) = line.strip_prefix(marker) {
            return r.trim_start();
        }
    }
    line
}

/// Result of augmenting one type. Partial results survive a failure: `error`
/// is set and `accepted` holds whatever was accepted before it.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityAugOutcome {
    pub entity_type: String,
    pub accepted: Vec<String>,
    pub records: Vec<GenerationRecord>,
    pub error: Option<EntityAugError>,
}

impl EntityAugOutcome {
    fn new(entity_type: &str) -> Self {
        Self {
            entity_type: entity_type.to_string(),
            accepted: Vec::new(),
            records: Vec::new(),
            error: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Tracks which normalized surfaces are already known for one type.
struct Dedup {
    normalization: Normalization,
    seen: HashSet<String>,
}

impl Dedup {
    fn new(pool: &EntityPool, entity_type: &str, normalization: Normalization) -> Self {
        let seen = pool
            .entries(entity_type)
            .iter()
            .map(|e| normalize_surface(&e.surface, normalization))
            .collect();
        Self {
            normalization,
            seen,
        }
    }

    /// New surfaces from `parsed`, at most `limit`, recorded as seen.
    fn take_new(&mut self, parsed: Vec<String>, limit: usize) -> Vec<String> {
        let mut fresh = Vec::new();
        for s in parsed {
            if fresh.len() >= limit {
                break;
            }
            if self.seen.insert(normalize_surface(&s, self.normalization)) {
                fresh.push(s);
            }
        }
        fresh
    }
}

/// Issues one call and classifies the response; returns `Err` only on a
/// backend failure (after recording it).
fn call_for_entities(
    outcome: &mut EntityAugOutcome,
    dedup: &mut Dedup,
    completer: &dyn Completer,
    prompt: String,
    sample: u32,
    limit: usize,
) -> Result<Vec<String>, EntityAugError> {
    let mut record = GenerationRecord::new(Stage::EntityAugmentation, &outcome.entity_type, &prompt);
    record.sample = sample;
    let response = match completer.complete_prompt(&prompt, sample) {
        Ok(r) => r,
        Err(source) => {
            record.verdict = Verdict::RejectedBackendError;
            record.detail = Some(source.to_string());
            outcome.records.push(record);
            return Err(EntityAugError::Backend { prompt, source });
        }
    };
    record.timestamp = response.created;
    let parsed = parse_entity_response(&response.text);
    record.raw_response = Some(response.text);
    let fresh = if parsed.is_empty() {
        record.verdict = Verdict::RejectedUnparseable;
        Vec::new()
    } else {
        let fresh = dedup.take_new(parsed, limit);
        record.verdict = if fresh.is_empty() {
            Verdict::RejectedNoNewEntities
        } else {
            Verdict::Accepted
        };
        fresh
    };
    record.accepted_entities = fresh.clone();
    outcome.records.push(record);
    Ok(fresh)
}

fn require_seeds(pool: &EntityPool, entity_type: &EntityType) -> Result<Vec<String>, EntityAugError> {
    let has_seed = pool
        .entries(&entity_type.name)
        .iter()
        .any(|e| e.provenance == Provenance::Seed);
    if !has_seed {
        return Err(EntityAugError::NoSeedEntities(entity_type.name.clone()));
    }
    Ok(pool.surfaces(&entity_type.name))
}

/// One prompt with every known surface of the type.
pub fn augment_entities_straightforward(
    pool: &EntityPool,
    entity_type: &EntityType,
    config: &EntityAugConfig,
    templates: &PromptTemplates,
    completer: &dyn Completer,
) -> EntityAugOutcome {
    let mut outcome = EntityAugOutcome::new(&entity_type.name);
    if let Err(e) = config.validate() {
        outcome.error = Some(e);
        return outcome;
    }
    if config.n_new == 0 {
        return outcome;
    }
    let examples = match require_seeds(pool, entity_type) {
        Ok(e) => e,
        Err(e) => {
            outcome.error = Some(e);
            return outcome;
        }
    };
    let prompt = match render_entity_prompt(templates, entity_type, &examples, config.n_new) {
        Ok(p) => p,
        Err(e) => {
            outcome.error = Some(e);
            return outcome;
        }
    };
    let mut dedup = Dedup::new(pool, &entity_type.name, config.normalization);
    match call_for_entities(&mut outcome, &mut dedup, completer, prompt.clone(), 0, config.n_new) {
        Ok(fresh) => {
            if outcome.records[0].verdict == Verdict::RejectedUnparseable {
                outcome.error = Some(EntityAugError::EmptyResponse {
                    prompt,
                    raw: outcome.records[0].raw_response.clone().unwrap_or_default(),
                });
            }
            outcome.accepted = fresh;
        }
        Err(e) => outcome.error = Some(e),
    }
    outcome
}

/// Batched prompts over several rounds; stops once `n_new` surfaces are
/// accepted or `max_rounds` rounds have run.
pub fn augment_entities_iterative(
    pool: &EntityPool,
    entity_type: &EntityType,
    config: &EntityAugConfig,
    templates: &PromptTemplates,
    completer: &dyn Completer,
) -> EntityAugOutcome {
    let mut outcome = EntityAugOutcome::new(&entity_type.name);
    if let Err(e) = config.validate() {
        outcome.error = Some(e);
        return outcome;
    }
    if config.n_new == 0 {
        return outcome;
    }
    let mut examples = match require_seeds(pool, entity_type) {
        Ok(e) => e,
        Err(e) => {
            outcome.error = Some(e);
            return outcome;
        }
    };
    let mut dedup = Dedup::new(pool, &entity_type.name, config.normalization);
    let mut sample = 0u32;
    let mut accepted: Vec<String> = Vec::new();

    'rounds: for _round in 0..config.max_rounds {
        let snapshot = examples.clone();
        for batch in snapshot.chunks(config.batch_size) {
            let remaining = config.n_new - accepted.len();
            if remaining == 0 {
                break 'rounds;
            }
            let prompt = render_entity_prompt(templates, entity_type, batch, remaining)
                .expect("batch non-empty and remaining >= 1");
            match call_for_entities(&mut outcome, &mut dedup, completer, prompt, sample, remaining) {
                Ok(fresh) => {
                    examples.extend(fresh.iter().cloned());
                    accepted.extend(fresh);
                }
                Err(e) => {
                    outcome.error = Some(e);
                    break 'rounds;
                }
            }
            sample += 1;
        }
    }

    if outcome.error.is_none()
        && !outcome.records.is_empty()
        && outcome
            .records
            .iter()
            .all(|r| r.verdict == Verdict::RejectedUnparseable)
    {
        let last = outcome.records.last().expect("non-empty");
        outcome.error = Some(EntityAugError::EmptyResponse {
            prompt: last.prompt.clone(),
            raw: last.raw_response.clone().unwrap_or_default(),
        });
    }
    outcome.accepted = accepted;
    outcome
}

pub fn augment_entities(
    pool: &EntityPool,
    entity_type: &EntityType,
    config: &EntityAugConfig,
    templates: &PromptTemplates,
    completer: &dyn Completer,
) -> EntityAugOutcome {
    match config.strategy {
        Strategy::Straightforward => {
            augment_entities_straightforward(pool, entity_type, config, templates, completer)
        }
        Strategy::Iterative => {
            augment_entities_iterative(pool, entity_type, config, templates, completer)
        }
    }
}

/// Types in scope for augmentation, in schema order.
pub fn augmentation_scope(schema: &EntitySchema, all_types: bool) -> Vec<&EntityType> {
    schema
        .types()
        .iter()
        .filter(|t| all_types || t.domain_specific)
        .collect()
}

/// Augments every in-scope type concurrently and merges accepted surfaces
/// into `pool` as `Generated`, in schema order. Outcomes come back in the
/// same order.
pub fn augment_pool(
    pool: &mut EntityPool,
    schema: &EntitySchema,
    config: &EntityAugConfig,
    templates: &PromptTemplates,
    completer: &dyn Completer,
) -> Vec<EntityAugOutcome> {
    let scope = augmentation_scope(schema, config.all_types);
    let snapshot: &EntityPool = pool;
    let outcomes: Vec<EntityAugOutcome> = std::thread::scope(|s| {
        let handles: Vec<_> = scope
            .iter()
            .map(|ty| s.spawn(move || augment_entities(snapshot, ty, config, templates, completer)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("augmentation thread panicked"))
            .collect()
    });
    for outcome in &outcomes {
        for surface in &outcome.accepted {
            pool.insert(&outcome.entity_type, surface, Provenance::Generated)
                .expect("scope types are in the schema");
        }
    }
    outcomes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entity_prompt_exact_text() {
        let p = render_entity_prompt(
            &PromptTemplates::default(),
            &EntityType::new("Drug", true),
            &["remdesivir"],
            5,
        )
        .unwrap();
        assert_eq!(
            p,
            "There are some entities about COVID-19 Drug such as remdesivir. Please generate 5 new entities of the same type."
        );
        let p = render_entity_prompt(
            &PromptTemplates::default(),
            &EntityType::new("Vaccine", true),
            &["a", "b"],
            1,
        )
        .unwrap();
        assert!(p.contains("Vaccine such as a, b. Please generate 1 new"));
    }

    #[test]
    fn entity_prompt_errors() {
        let t = PromptTemplates::default();
        let ty = EntityType::new("Drug", true);
        let none: [&str; 0] = [];
        assert_eq!(render_entity_prompt(&t, &ty, &none, 3), Err(EntityAugError::NoExamples));
        assert_eq!(render_entity_prompt(&t, &ty, &["x"], 0), Err(EntityAugError::ZeroCount));
    }

    #[test]
    fn response_parsing() {
        assert_eq!(
            parse_entity_response("1. Paxlovid\n2. molnupiravir"),
            ["Paxlovid", "molnupiravir"]
        );
        assert!(parse_entity_response("").is_empty());
        assert_eq!(parse_entity_response("a, b,  , c"), ["a", "b", "c"]);
        assert_eq!(
            parse_entity_response("- \"Pfizer\"\n* 'Moderna'\n\u{2022} Novavax\n10) J&J shot"),
            ["Pfizer", "Moderna", "Novavax", "J&J shot"]
        );
        assert_eq!(parse_entity_response("3M mask"), ["3M mask"]);
        assert_eq!(parse_entity_response("1.   long   covid  "), ["long covid"]);
    }
}
