//! Token-per-line CoNLL reader and writer.
//!
//! Format: UTF-8, one `surface<TAB>tag` pair per line, sentences separated by
//! one blank line, the file ends with a blank line. The reader tolerates
//! runs of blank lines, `\r\n` endings, and a missing final blank line; the
//! writer always emits the canonical form.

use indexmap::IndexSet;
use thiserror::Error;

use super::bio::repair_tags;
use super::{valid_surface, Corpus, EntitySchema, SchemaError, Tag, TaggedSentence, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Reject any invalid BIO transition.
    #[default]
    Strict,
    /// Rewrite an `I-X` that cannot continue a span into `B-X`.
    Repair,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub mode: ParseMode,
    /// When absent, the schema is inferred from the tags in order of first
    /// appearance, with no type marked domain-specific.
    pub schema: Option<EntitySchema>,
}

impl ParseOptions {
    pub fn with_schema(schema: EntitySchema) -> Self {
        Self {
            mode: ParseMode::Strict,
            schema: Some(schema),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("input is not valid UTF-8")]
    Utf8,
    #[error("expected 2 tab-separated fields, found {0}")]
    FieldCount(usize),
    #[error("token surface {0:?} is empty or contains whitespace")]
    Surface(String),
    #[error("malformed tag {0:?}")]
    Tag(String),
    #[error("{tag} cannot follow {prev}")]
    Transition { prev: String, tag: String },
    #[error("entity type {0:?} is not in the schema")]
    UnknownType(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Parse failure with a 1-based line and column (in characters).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

struct PendingToken {
    token: Token,
    line: usize,
    tag_column: usize,
}

pub fn parse_conll(input: &[u8], options: &ParseOptions) -> Result<Corpus, ParseError> {
    let text = std::str::from_utf8(input).map_err(|e| {
        let line = 1 + input[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
        ParseError {
            line,
            column: 1,
            kind: ParseErrorKind::Utf8,
        }
    })?;

    let mut sentences = Vec::new();
    let mut seen_types: IndexSet<String> = IndexSet::new();
    let mut pending: Vec<PendingToken> = Vec::new();

    let mut flush = |pending: &mut Vec<PendingToken>| -> Result<(), ParseError> {
        if pending.is_empty() {
            return Ok(());
        }
        let sentence = finish_sentence(std::mem::take(pending), options)?;
        sentences.push(sentence);
        Ok(())
    };

    for (idx, raw_line) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.is_empty() {
            flush(&mut pending)?;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(ParseError {
                line: line_no,
                column: 1,
                kind: ParseErrorKind::FieldCount(fields.len()),
            });
        }
        let (surface, tag_str) = (fields[0], fields[1]);
        if !valid_surface(surface) {
            return Err(ParseError {
                line: line_no,
                column: 1,
                kind: ParseErrorKind::Surface(surface.to_string()),
            });
        }
        let tag_column = surface.chars().count() + 2;
        let tag: Tag = tag_str.parse().map_err(|_| ParseError {
            line: line_no,
            column: tag_column,
            kind: ParseErrorKind::Tag(tag_str.to_string()),
        })?;
        if let Some(ty) = tag.entity_type() {
            match &options.schema {
                Some(schema) if !schema.contains(ty) => {
                    return Err(ParseError {
                        line: line_no,
                        column: tag_column,
                        kind: ParseErrorKind::UnknownType(ty.to_string()),
                    })
                }
                Some(_) => {}
                None => {
                    seen_types.insert(ty.to_string());
                }
            }
        }
        pending.push(PendingToken {
            token: Token::new(surface, tag),
            line: line_no,
            tag_column,
        });
    }
    flush(&mut pending)?;

    let schema = match &options.schema {
        Some(s) => s.clone(),
        None => EntitySchema::inferred(seen_types).map_err(|e| ParseError {
            line: 1,
            column: 1,
            kind: e.into(),
        })?,
    };
    Ok(Corpus::new(schema, sentences).expect("tag types checked against schema while parsing"))
}

fn finish_sentence(
    pending: Vec<PendingToken>,
    options: &ParseOptions,
) -> Result<TaggedSentence, ParseError> {
    let mut tags: Vec<Tag> = pending.iter().map(|p| p.token.tag.clone()).collect();
    match options.mode {
        ParseMode::Strict => {
            for i in 0..tags.len() {
                let prev = if i == 0 { None } else { Some(&tags[i - 1]) };
                if !tags[i].may_follow(prev) {
                    return Err(ParseError {
                        line: pending[i].line,
                        column: pending[i].tag_column,
                        kind: ParseErrorKind::Transition {
                            prev: prev.map_or("sentence start".into(), Tag::to_string),
                            tag: tags[i].to_string(),
                        },
                    });
                }
            }
        }
        ParseMode::Repair => {
            for i in repair_tags(&mut tags) {
                log::debug!("line {}: repaired leading I- tag", pending[i].line);
            }
        }
    }
    let tokens = pending
        .into_iter()
        .zip(tags)
        .map(|(p, tag)| Token::new(p.token.surface, tag))
        .collect();
    Ok(TaggedSentence::new(tokens).expect("surfaces and transitions validated"))
}

pub fn serialize_conll(corpus: &Corpus) -> Vec<u8> {
    serialize_sentences(corpus.sentences())
}

pub fn serialize_sentences(sentences: &[TaggedSentence]) -> Vec<u8> {
    let mut out = String::new();
    for s in sentences {
        for tok in s.tokens() {
            out.push_str(&tok.surface);
            out.push('\t');
            out.push_str(&tok.tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out.into_bytes()
}
