//! Data model for BIO-tagged corpora.
//!
//! A [`Corpus`] is an [`EntitySchema`] plus an ordered list of
//! [`TaggedSentence`]s. Every constructor validates its invariants, so any
//! value of these types that exists is well formed: surfaces carry no
//! whitespace, tags follow BIO transition rules, and every entity type used
//! by a tag is declared in the schema.
//!
//! Conversion between tag sequences and [`EntitySpan`]s lives in [`bio`],
//! the CoNLL reader/writer in [`conll`].

pub mod bio;
pub mod conll;
mod schema;

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bio::{extract_spans, spans_to_bio};
pub use conll::{parse_conll, serialize_conll, ParseError, ParseMode, ParseOptions};
pub use schema::{EntitySchema, EntityType, SchemaError};

/// A BIO label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    /// Entity type carried by the tag, `None` for `O`.
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Tag::Outside)
    }

    /// Whether `self` may directly follow `prev` (`None` = sentence start).
    pub fn may_follow(&self, prev: Option<&Tag>) -> bool {
        match self {
            Tag::Outside | Tag::Begin(_) => true,
            Tag::Inside(ty) => match prev {
                Some(Tag::Begin(p)) | Some(Tag::Inside(p)) => p == ty,
                _ => false,
            },
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid BIO tag {0:?}")]
pub struct InvalidTag(pub String);

impl FromStr for Tag {
    type Err = InvalidTag;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let bad = || InvalidTag(s.to_string());
        let (prefix, ty) = s.split_once('-').ok_or_else(bad)?;
        if ty.is_empty() || ty.chars().any(char::is_whitespace) {
            return Err(bad());
        }
        match prefix {
            "B" => Ok(Tag::Begin(ty.to_string())),
            "I" => Ok(Tag::Inside(ty.to_string())),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One token of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub tag: Tag,
}

impl Token {
    pub fn new(surface: impl Into<String>, tag: Tag) -> Self {
        Self {
            surface: surface.into(),
            tag,
        }
    }

    pub fn outside(surface: impl Into<String>) -> Self {
        Self::new(surface, Tag::Outside)
    }
}

/// A contiguous entity mention, `start..end` in token indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub surface: String,
}

impl EntitySpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Where a sentence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Seed,
    Generated,
}

/// Violations of the per-sentence invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BioError {
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("token {index}: surface {surface:?} is empty or contains whitespace")]
    InvalidSurface { index: usize, surface: String },
    #[error("token {index}: {tag} cannot follow {}", prev.as_ref().map_or("sentence start".to_string(), Tag::to_string))]
    InvalidTransition {
        index: usize,
        prev: Option<Tag>,
        tag: Tag,
    },
    #[error("span {start}..{end} is out of range for {len} tokens")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("span {start}..{end} overlaps a previous span")]
    OverlappingSpans { start: usize, end: usize },
    #[error("span {start}..{end} has an invalid entity type {entity_type:?}")]
    InvalidSpanType {
        start: usize,
        end: usize,
        entity_type: String,
    },
}

pub(crate) fn valid_surface(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

/// A non-empty token sequence with valid BIO transitions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSentence", into = "RawSentence")]
pub struct TaggedSentence {
    tokens: Vec<Token>,
    origin: Origin,
    meta: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawSentence {
    tokens: Vec<Token>,
    #[serde(default)]
    origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<String>,
}

impl TryFrom<RawSentence> for TaggedSentence {
    type Error = BioError;

    fn try_from(raw: RawSentence) -> Result<Self, Self::Error> {
        Ok(TaggedSentence::new(raw.tokens)?
            .with_origin(raw.origin)
            .with_meta(raw.meta))
    }
}

impl From<TaggedSentence> for RawSentence {
    fn from(s: TaggedSentence) -> Self {
        RawSentence {
            tokens: s.tokens,
            origin: s.origin,
            meta: s.meta,
        }
    }
}

impl TaggedSentence {
    pub fn new(tokens: Vec<Token>) -> Result<Self, BioError> {
        validate_tokens(&tokens)?;
        Ok(Self {
            tokens,
            origin: Origin::Seed,
            meta: None,
        })
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_meta(mut self, meta: Option<String>) -> Self {
        self.meta = meta;
        self
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn meta(&self) -> Option<&str> {
        self.meta.as_deref()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    pub fn tags(&self) -> impl Iterator<Item = &Tag> {
        self.tokens.iter().map(|t| &t.tag)
    }

    /// Token surfaces joined by single spaces.
    pub fn text(&self) -> String {
        self.surfaces().collect::<Vec<_>>().join(" ")
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        bio::spans_of_valid(&self.tokens)
    }

    /// Same tokens and tags, ignoring provenance.
    pub fn same_content(&self, other: &TaggedSentence) -> bool {
        self.tokens == other.tokens
    }
}

pub(crate) fn validate_tokens(tokens: &[Token]) -> Result<(), BioError> {
    if tokens.is_empty() {
        return Err(BioError::EmptySentence);
    }
    let mut prev: Option<&Tag> = None;
    for (index, tok) in tokens.iter().enumerate() {
        if !valid_surface(&tok.surface) {
            return Err(BioError::InvalidSurface {
                index,
                surface: tok.surface.clone(),
            });
        }
        if !tok.tag.may_follow(prev) {
            return Err(BioError::InvalidTransition {
                index,
                prev: prev.cloned(),
                tag: tok.tag.clone(),
            });
        }
        prev = Some(&tok.tag);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("sentence {sentence}, token {token}: entity type {entity_type:?} is not in the schema")]
    UnknownType {
        sentence: usize,
        token: usize,
        entity_type: String,
    },
}

/// A schema plus its sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Corpus {
    schema: EntitySchema,
    sentences: Vec<TaggedSentence>,
}

impl Corpus {
    pub fn new(schema: EntitySchema, sentences: Vec<TaggedSentence>) -> Result<Self, CorpusError> {
        for (si, s) in sentences.iter().enumerate() {
            for (ti, tok) in s.tokens().iter().enumerate() {
                if let Some(ty) = tok.tag.entity_type() {
                    if !schema.contains(ty) {
                        return Err(CorpusError::UnknownType {
                            sentence: si,
                            token: ti,
                            entity_type: ty.to_string(),
                        });
                    }
                }
            }
        }
        Ok(Self { schema, sentences })
    }

    pub fn empty(schema: EntitySchema) -> Self {
        Self {
            schema,
            sentences: Vec::new(),
        }
    }

    pub fn schema(&self) -> &EntitySchema {
        &self.schema
    }

    pub fn sentences(&self) -> &[TaggedSentence] {
        &self.sentences
    }

    pub fn into_sentences(self) -> Vec<TaggedSentence> {
        self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Keeps the schema, replaces the sentences. The sentences must only use
    /// types from this corpus' schema.
    pub fn with_sentences(&self, sentences: Vec<TaggedSentence>) -> Result<Corpus, CorpusError> {
        Corpus::new(self.schema.clone(), sentences)
    }

    pub fn span_count(&self) -> usize {
        self.sentences.iter().map(|s| s.spans().len()).sum()
    }
}

/// Mention count per schema type, in schema order. Types without mentions
/// map to zero.
pub fn entity_type_counts(corpus: &Corpus) -> IndexMap<String, usize> {
    let mut counts: IndexMap<String, usize> = corpus
        .schema()
        .names()
        .map(|n| (n.to_string(), 0))
        .collect();
    for s in corpus.sentences() {
        for span in s.spans() {
            *counts.entry(span.entity_type).or_insert(0) += 1;
        }
    }
    counts
}
