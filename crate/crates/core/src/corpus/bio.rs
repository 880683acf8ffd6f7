//! Conversion between BIO tag sequences and entity spans.

use super::{validate_tokens, BioError, EntitySpan, Tag, TaggedSentence, Token};

/// Spans of a token sequence, sorted by start. Fails on an invalid sequence.
pub fn extract_spans(tokens: &[Token]) -> Result<Vec<EntitySpan>, BioError> {
    validate_tokens(tokens)?;
    Ok(spans_of_valid(tokens))
}

pub(crate) fn spans_of_valid(tokens: &[Token]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let close = |spans: &mut Vec<EntitySpan>, start: usize, end: usize, ty: &str| {
        spans.push(EntitySpan {
            start,
            end,
            entity_type: ty.to_string(),
            surface: join(&tokens[start..end]),
        });
    };
    for (i, tok) in tokens.iter().enumerate() {
        match &tok.tag {
            Tag::Inside(_) => {}
            Tag::Outside => {
                if let Some((start, ty)) = open.take() {
                    close(&mut spans, start, i, ty);
                }
            }
            Tag::Begin(ty) => {
                if let Some((start, prev)) = open.take() {
                    close(&mut spans, start, i, prev);
                }
                open = Some((i, ty));
            }
        }
    }
    if let Some((start, ty)) = open {
        close(&mut spans, start, tokens.len(), ty);
    }
    spans
}

fn join(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| t.surface.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds a tagged sentence from surfaces and spans. Spans may come in any
/// order but must not overlap; their `surface` field is ignored.
pub fn spans_to_bio<S: AsRef<str>>(
    surfaces: &[S],
    spans: &[EntitySpan],
) -> Result<TaggedSentence, BioError> {
    let len = surfaces.len();
    let mut tags = vec![Tag::Outside; len];
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    let mut covered = 0usize;
    for span in sorted {
        if span.start >= span.end || span.end > len {
            return Err(BioError::SpanOutOfRange {
                start: span.start,
                end: span.end,
                len,
            });
        }
        if span.start < covered {
            return Err(BioError::OverlappingSpans {
                start: span.start,
                end: span.end,
            });
        }
        if !super::valid_surface(&span.entity_type) {
            return Err(BioError::InvalidSpanType {
                start: span.start,
                end: span.end,
                entity_type: span.entity_type.clone(),
            });
        }
        tags[span.start] = Tag::Begin(span.entity_type.clone());
        for t in &mut tags[span.start + 1..span.end] {
            *t = Tag::Inside(span.entity_type.clone());
        }
        covered = span.end;
    }
    let tokens = surfaces
        .iter()
        .zip(tags)
        .map(|(s, tag)| Token::new(s.as_ref(), tag))
        .collect();
    TaggedSentence::new(tokens)
}

/// Rewrites every `I-X` that may not follow its predecessor into `B-X`.
/// Returns the indices that were changed.
pub fn repair_tags(tags: &mut [Tag]) -> Vec<usize> {
    let mut fixed = Vec::new();
    for i in 0..tags.len() {
        let ok = {
            let prev = if i == 0 { None } else { Some(&tags[i - 1]) };
            tags[i].may_follow(prev)
        };
        if !ok {
            if let Tag::Inside(ty) = &tags[i] {
                tags[i] = Tag::Begin(ty.clone());
                fixed.push(i);
            }
        }
    }
    fixed
}
