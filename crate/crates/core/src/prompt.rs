//! Prompt templates and the placeholder renderer.
//!
//! Placeholders are `{name}`. Substitution is a single left-to-right pass, so
//! braces inside substituted values are never expanded again. Unknown
//! placeholders are left as they are.

use serde::{Deserialize, Serialize};

pub const ENTITY_TEMPLATE: &str = "There are some entities about {domain} {type} such as {examples}. Please generate {n} new entities of the same type.";

pub const INSTANCE_TEMPLATE: &str = "Take the sentence as an example {demonstration}, please generate a new {domain} tweet which only has the {entity}, without introducing any other named entity.";

pub const VERIFICATION_TEMPLATE: &str = "Answer two questions about the text below with yes or no, one answer per line.\nText: {sentence}\n1. Is \"{entity}\" a {type} entity relevant to {domain}?\n2. Does the text mention any named entity other than \"{entity}\"?";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub domain: String,
    /// Placeholders: `{domain}`, `{type}`, `{examples}`, `{n}`.
    pub entity: String,
    /// Placeholders: `{domain}`, `{demonstration}`, `{entity}`, `{type}`.
    pub instance: String,
    /// Placeholders: `{domain}`, `{sentence}`, `{entity}`, `{type}`.
    pub verification: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            domain: "COVID-19".into(),
            entity: ENTITY_TEMPLATE.into(),
            instance: INSTANCE_TEMPLATE.into(),
            verification: VERIFICATION_TEMPLATE.into(),
        }
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
