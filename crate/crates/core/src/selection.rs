//! Demonstration selection.
//!
//! Two procedures pick the seed sentences that later anchor instance
//! generation:
//!
//! * fully supervised: keep sentences with at most `t` mentions, move
//!   sentences that mention a domain-specific type to the front, under-sample
//!   the single most frequent type, then keep only sentences that mention a
//!   domain-specific type;
//! * few-shot: a seeded shuffle followed by a greedy pass that accepts a
//!   sentence only if no per-type mention counter would exceed `alpha * k`,
//!   stopping as soon as every counter reaches `k`.
//!
//! Counters count entity mentions, so a sentence with two `Drug` spans adds
//! two to the `Drug` counter.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EntitySchema, TaggedSentence};
use crate::rng::shuffled_indices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    FullySupervised,
    #[default]
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Mentions required per entity type (few-shot).
    pub k: usize,
    /// Tolerance ratio; counters never exceed `alpha * k`.
    pub alpha: f64,
    /// Maximum mentions per sentence (fully supervised).
    pub t: usize,
    pub seed: u64,
    pub mode: SelectionMode,
    /// Share of mentions the most frequent type may keep after
    /// under-sampling (fully supervised).
    pub max_majority_share: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k: 5,
            alpha: 1.3,
            t: 5,
            seed: 0,
            mode: SelectionMode::FewShot,
            max_majority_share: 0.5,
        }
    }
}

impl SelectionConfig {
    pub fn few_shot(k: usize, alpha: f64, seed: u64) -> Self {
        Self {
            k,
            alpha,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.alpha.is_finite() && self.alpha >= 1.0) {
            return Err(SelectionError::InvalidConfig(format!(
                "alpha must be >= 1, got {}",
                self.alpha
            )));
        }
        if self.t < 1 {
            return Err(SelectionError::InvalidConfig("t must be >= 1".into()));
        }
        if !(self.max_majority_share > 0.0 && self.max_majority_share <= 1.0) {
            return Err(SelectionError::InvalidConfig(format!(
                "max_majority_share must be in (0, 1], got {}",
                self.max_majority_share
            )));
        }
        Ok(())
    }

    /// Upper bound on any counter in few-shot mode.
    pub fn cap(&self) -> f64 {
        self.alpha * self.k as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error("schema marks no entity type as domain-specific")]
    NoDomainSpecificType,
    #[error("selection mode {0:?} does not match the requested procedure")]
    WrongMode(SelectionMode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub demos: Vec<TaggedSentence>,
    /// Mentions per schema type across `demos`, in schema order.
    pub counters: IndexMap<String, usize>,
    pub satisfied: bool,
    pub rejected_count: usize,
    /// Types whose counter stayed below `k` (few-shot, unsatisfied only).
    pub deficient: Vec<String>,
}

/// JSON written next to the selected demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSidecar {
    pub counters: IndexMap<String, usize>,
    pub satisfied: bool,
    pub rejected_count: usize,
    pub deficient: Vec<String>,
    pub seed: u64,
    pub config: SelectionConfig,
}

impl SelectionResult {
    pub fn sidecar(&self, config: &SelectionConfig) -> SelectionSidecar {
        SelectionSidecar {
            counters: self.counters.clone(),
            satisfied: self.satisfied,
            rejected_count: self.rejected_count,
            deficient: self.deficient.clone(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

fn zero_counters(schema: &EntitySchema) -> IndexMap<String, usize> {
    schema.names().map(|n| (n.to_string(), 0)).collect()
}

/// Mentions per schema type in one sentence; types outside the schema are
/// ignored.
fn mention_delta(sentence: &TaggedSentence, schema: &EntitySchema) -> IndexMap<String, usize> {
    let mut delta = zero_counters(schema);
    for span in sentence.spans() {
        if let Some(c) = delta.get_mut(&span.entity_type) {
            *c += 1;
        }
    }
    delta
}

fn count_mentions<'a>(
    sentences: impl IntoIterator<Item = &'a TaggedSentence>,
    schema: &EntitySchema,
) -> IndexMap<String, usize> {
    let mut counters = zero_counters(schema);
    for s in sentences {
        for (ty, n) in mention_delta(s, schema) {
            counters[&ty] += n;
        }
    }
    counters
}

fn has_domain_specific(sentence: &TaggedSentence, schema: &EntitySchema) -> bool {
    sentence
        .spans()
        .iter()
        .any(|s| schema.is_domain_specific(&s.entity_type))
}

/// Sentences with at most `t` entity mentions, in original order.
pub fn filter_quality_subset(corpus: &Corpus, t: usize) -> Result<Corpus, SelectionError> {
    if t < 1 {
        return Err(SelectionError::InvalidConfig("t must be >= 1".into()));
    }
    let kept = corpus
        .sentences()
        .iter()
        .filter(|s| s.spans().len() <= t)
        .cloned()
        .collect();
    Ok(corpus.with_sentences(kept).expect("subset keeps the schema"))
}

/// Stable reorder putting sentences that mention a domain-specific type first.
pub fn prioritize_domain_specific(corpus: &Corpus, schema: &EntitySchema) -> Corpus {
    let (mut first, rest): (Vec<_>, Vec<_>) = corpus
        .sentences()
        .iter()
        .cloned()
        .partition(|s| has_domain_specific(s, schema));
    first.extend(rest);
    corpus.with_sentences(first).expect("reorder keeps the schema")
}

/// Drops sentences whose mentions are all of the most frequent type, from the
/// back of the corpus forward, until that type's share of all mentions is at
/// most `max_share` or no such sentence is left.
pub fn undersample_majority(corpus: &Corpus, max_share: f64) -> Corpus {
    let schema = corpus.schema();
    let mut counters = count_mentions(corpus.sentences(), schema);
    let mut total: usize = counters.values().sum();
    let Some((majority, _)) = counters
        .iter()
        .fold(None::<(&String, usize)>, |best, (ty, &n)| match best {
            Some((_, b)) if b >= n => best,
            _ => Some((ty, n)),
        })
        .map(|(ty, n)| (ty.clone(), n))
    else {
        return corpus.clone();
    };
    if total == 0 {
        return corpus.clone();
    }
    let share = |major: usize, total: usize| major as f64 / total as f64;

    let sentences = corpus.sentences();
    let mut keep = vec![true; sentences.len()];
    for i in (0..sentences.len()).rev() {
        if total == 0 || share(counters[&majority], total) <= max_share {
            break;
        }
        let spans = sentences[i].spans();
        if !spans.is_empty() && spans.iter().all(|s| s.entity_type == majority) {
            keep[i] = false;
            counters[&majority] -= spans.len();
            total -= spans.len();
        }
    }
    let kept = sentences
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(s, _)| s.clone())
        .collect();
    corpus.with_sentences(kept).expect("subset keeps the schema")
}

/// Keeps the sentences that mention at least one domain-specific type.
pub fn select_full_demos(
    quality_subset: &Corpus,
    schema: &EntitySchema,
) -> Result<SelectionResult, SelectionError> {
    if !schema.has_domain_specific() {
        return Err(SelectionError::NoDomainSpecificType);
    }
    let demos: Vec<TaggedSentence> = quality_subset
        .sentences()
        .iter()
        .filter(|s| has_domain_specific(s, schema))
        .cloned()
        .collect();
    let counters = count_mentions(&demos, schema);
    Ok(SelectionResult {
        satisfied: !demos.is_empty(),
        rejected_count: quality_subset.len() - demos.len(),
        counters,
        demos,
        deficient: Vec::new(),
    })
}

/// The full fully-supervised procedure: length filter, domain priority,
/// under-sampling, domain filter.
pub fn select_fully_supervised(
    corpus: &Corpus,
    schema: &EntitySchema,
    config: &SelectionConfig,
) -> Result<SelectionResult, SelectionError> {
    config.validate()?;
    if config.mode != SelectionMode::FullySupervised {
        return Err(SelectionError::WrongMode(config.mode));
    }
    if !schema.has_domain_specific() {
        return Err(SelectionError::NoDomainSpecificType);
    }
    let subset = filter_quality_subset(corpus, config.t)?;
    let ordered = prioritize_domain_specific(&subset, schema);
    let balanced = undersample_majority(&ordered, config.max_majority_share);
    let mut result = select_full_demos(&balanced, schema)?;
    result.rejected_count = corpus.len() - result.demos.len();
    Ok(result)
}

/// Greedy tolerance-bounded k-shot sampler over a seeded shuffle of the corpus.
pub fn select_kshot_demos(
    corpus: &Corpus,
    schema: &EntitySchema,
    config: &SelectionConfig,
) -> Result<SelectionResult, SelectionError> {
    let order = shuffled_indices(corpus.len(), config.seed);
    select_kshot_with_order(corpus, schema, config, &order)
}

/// The k-shot sampler over an explicit visiting order (a permutation of
/// sentence indices). [`select_kshot_demos`] passes the seeded shuffle.
pub fn select_kshot_with_order(
    corpus: &Corpus,
    schema: &EntitySchema,
    config: &SelectionConfig,
    order: &[usize],
) -> Result<SelectionResult, SelectionError> {
    config.validate()?;
    if config.mode != SelectionMode::FewShot {
        return Err(SelectionError::WrongMode(config.mode));
    }
    let mut counters = zero_counters(schema);
    if config.k == 0 {
        return Ok(SelectionResult {
            demos: Vec::new(),
            counters,
            satisfied: true,
            rejected_count: 0,
            deficient: Vec::new(),
        });
    }
    let cap = config.cap();
    let k = config.k;
    let sentences = corpus.sentences();
    let mut demos = Vec::new();
    let mut rejected_count = 0;

    for &idx in order {
        let sentence = &sentences[idx];
        let delta = mention_delta(sentence, schema);
        let fits = counters
            .iter()
            .all(|(ty, &c)| (c + delta[ty]) as f64 <= cap);
        if fits {
            for (ty, d) in &delta {
                counters[ty] += d;
            }
            demos.push(sentence.clone());
        } else {
            rejected_count += 1;
        }
        if counters.values().all(|&c| c >= k) {
            break;
        }
    }

    let deficient: Vec<String> = counters
        .iter()
        .filter(|(_, &c)| c < k)
        .map(|(ty, _)| ty.clone())
        .collect();
    Ok(SelectionResult {
        demos,
        counters,
        satisfied: deficient.is_empty(),
        rejected_count,
        deficient,
    })
}

/// Dispatches on `config.mode`.
pub fn select(
    corpus: &Corpus,
    schema: &EntitySchema,
    config: &SelectionConfig,
) -> Result<SelectionResult, SelectionError> {
    match config.mode {
        SelectionMode::FewShot => select_kshot_demos(corpus, schema, config),
        SelectionMode::FullySupervised => select_fully_supervised(corpus, schema, config),
    }
}
