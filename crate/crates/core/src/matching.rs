//! Token-boundary surface matching.
//!
//! Text and entity surfaces are split on whitespace and each token is
//! stripped of leading and trailing non-alphanumeric characters, so
//! `"Paxlovid!"` matches `Paxlovid`. `Casefold` additionally lowercases.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Exact,
    #[default]
    Casefold,
}

impl Matcher {
    pub fn normalize_token(self, token: &str) -> String {
        let stripped = token.trim_matches(|c: char| !c.is_alphanumeric());
        match self {
            Matcher::Exact => stripped.to_string(),
            Matcher::Casefold => stripped.to_lowercase(),
        }
    }

    pub fn normalize_tokens<'a, I>(self, tokens: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        tokens.into_iter().map(|t| self.normalize_token(t)).collect()
    }

    /// Normalized token pattern of a surface; `None` when nothing
    /// alphanumeric is left to match.
    pub fn pattern(self, surface: &str) -> Option<Vec<String>> {
        let pat = self.normalize_tokens(surface.split_whitespace());
        pat.iter().any(|t| !t.is_empty()).then_some(pat)
    }
}

/// Start indices of non-overlapping occurrences of `pattern`, scanning left
/// to right.
pub fn find_occurrences(tokens: &[String], pattern: &[String]) -> Vec<usize> {
    let mut hits = Vec::new();
    if pattern.is_empty() || pattern.len() > tokens.len() {
        return hits;
    }
    let mut i = 0;
    while i + pattern.len() <= tokens.len() {
        if tokens[i..i + pattern.len()] == *pattern {
            hits.push(i);
            i += pattern.len();
        } else {
            i += 1;
        }
    }
    hits
}

#[derive(Debug, Clone)]
struct GazetteerEntry {
    surface: String,
    entity_type: String,
    pattern: Vec<String>,
}

/// Known entity surfaces indexed by their first normalized token.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    matcher: Matcher,
    entries: Vec<GazetteerEntry>,
    by_first: HashMap<String, Vec<usize>>,
}

/// A gazetteer surface found in a token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GazetteerHit {
    pub surface: String,
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

impl Gazetteer {
    pub fn new<'a, I>(matcher: Matcher, surfaces: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut g = Self {
            matcher,
            entries: Vec::new(),
            by_first: HashMap::new(),
        };
        for (ty, surface) in surfaces {
            if let Some(pattern) = matcher.pattern(surface) {
                g.by_first
                    .entry(pattern[0].clone())
                    .or_default()
                    .push(g.entries.len());
                g.entries.push(GazetteerEntry {
                    surface: surface.to_string(),
                    entity_type: ty.to_string(),
                    pattern,
                });
            }
        }
        g
    }

    pub fn matcher(&self) -> Matcher {
        self.matcher
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every occurrence (overlaps included) of every entry in `tokens`, by
    /// start position, then entry order.
    pub fn scan(&self, tokens: &[String]) -> Vec<GazetteerHit> {
        let mut hits = Vec::new();
        for (start, tok) in tokens.iter().enumerate() {
            let Some(candidates) = self.by_first.get(tok) else {
                continue;
            };
            for &idx in candidates {
                let e = &self.entries[idx];
                let end = start + e.pattern.len();
                if end <= tokens.len() && tokens[start..end] == *e.pattern {
                    hits.push(GazetteerHit {
                        surface: e.surface.clone(),
                        entity_type: e.entity_type.clone(),
                        start,
                        end,
                    });
                }
            }
        }
        hits
    }
}
