//! Seeded, rule-driven stand-in for a chat model.
//!
//! A scenario is an ordered list of rules. The first rule whose regex matches
//! the prompt picks one of its response templates and expands it. Output is a
//! pure function of (scenario, seed, prompt, sample).
//!
//! Template directives:
//!
//! * `{{name}}` - named capture group `name` of the rule's pattern
//! * `{{filler}}` - two to five words drawn from the filler vocabulary
//! * `{{entity_list}}` - numbered list of `n` invented names, `n` taken from
//!   the capture group `n` (at most 50)
//! * `{{pick:a|b|c}}` - one of the listed alternatives

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use super::{excerpt, CompletionRequest, CompletionResponse, LlmBackend, LlmError};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    pub templates: Vec<String>,
}

impl MockRule {
    pub fn new(pattern: impl Into<String>, templates: &[&str]) -> Self {
        Self {
            pattern: pattern.into(),
            templates: templates.iter().map(|t| t.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScenario {
    pub rules: Vec<MockRule>,
    /// Returned when no rule matches; `None` makes that an error.
    #[serde(default)]
    pub default_response: Option<String>,
    #[serde(default = "default_filler")]
    pub filler_words: Vec<String>,
}

fn default_filler() -> Vec<String> {
    [
        "just", "today", "really", "finally", "honestly", "so", "glad", "everyone", "talking",
        "about", "news", "again", "still", "waiting", "hope", "this", "works", "week", "after",
        "heard", "thinking", "wow", "morning", "tonight", "update", "reading", "more", "people",
        "asking", "got", "my", "we", "need", "lol", "thread", "here", "latest", "okay",
    ]
    .iter()
    .map(|w| w.to_string())
    .collect()
}

const SYLLABLES: &[&str] = &[
    "ra", "vo", "zen", "mi", "tor", "la", "qui", "bex", "dor", "sa", "fen", "lu", "cor", "ny",
    "vax", "tel", "ki", "mor", "pa", "zil",
];

impl MockScenario {
    /// Rules answering the toolkit's default entity, instance and
    /// verification prompts with well-formed output.
    pub fn eka_default() -> Self {
        Self {
            rules: vec![
                MockRule::new(r"(?s)^Answer two questions", &["yes\nno"]),
                MockRule::new(
                    r"(?s)^There are some entities about .* (?P<type>\S+) such as .*Please generate (?P<n>\d+) new entities",
                    &["{{entity_list}}"],
                ),
                MockRule::new(
                    r"(?s)^Take the sentence as an example .*which only has the (?P<entity>.+), without introducing any other named entity",
                    &[
                        "{{filler}} {{entity}} {{filler}}",
                        "{{entity}} {{filler}}",
                        "{{filler}} {{entity}}",
                    ],
                ),
            ],
            default_response: None,
            filler_words: default_filler(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        serde_json::from_str(text).map_err(|e| LlmError::Scenario(e.to_string()))
    }
}

pub struct MockBackend {
    rules: Vec<(Regex, Vec<String>)>,
    default_response: Option<String>,
    filler: Vec<String>,
    seed: u64,
    directive: Regex,
}

impl MockBackend {
    pub fn new(scenario: MockScenario, seed: u64) -> Result<Self, LlmError> {
        let rules = scenario
            .rules
            .into_iter()
            .map(|r| {
                if r.templates.is_empty() {
                    return Err(LlmError::Scenario(format!("rule {:?} has no templates", r.pattern)));
                }
                let re = Regex::new(&r.pattern)
                    .map_err(|e| LlmError::Scenario(format!("{:?}: {e}", r.pattern)))?;
                Ok((re, r.templates))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if scenario.filler_words.is_empty() {
            return Err(LlmError::Scenario("filler vocabulary is empty".into()));
        }
        Ok(Self {
            rules,
            default_response: scenario.default_response,
            filler: scenario.filler_words,
            seed,
            directive: Regex::new(r"\{\{([^}]*)\}\}").expect("static regex"),
        })
    }

    pub fn respond(&self, prompt: &str, sample: u32) -> Result<String, LlmError> {
        let mut rng = SplitMix64::new(derive_seed(
            self.seed,
            &[prompt.as_bytes(), &sample.to_le_bytes()],
        ));
        for (re, templates) in &self.rules {
            if let Some(caps) = re.captures(prompt) {
                let template = rng.choose(templates).expect("templates non-empty");
                return Ok(self.expand(template, &caps, &mut rng));
            }
        }
        self.default_response
            .clone()
            .ok_or_else(|| LlmError::NoMockRule(excerpt(prompt, 80)))
    }

    fn expand(&self, template: &str, caps: &Captures<'_>, rng: &mut SplitMix64) -> String {
        self.directive
            .replace_all(template, |d: &Captures<'_>| {
                let name = &d[1];
                if name == "filler" {
                    let n = 2 + rng.below(4);
                    (0..n)
                        .map(|_| rng.choose(&self.filler).expect("non-empty").as_str())
                        .collect::<Vec<_>>()
                        .join(" ")
                } else if name == "entity_list" {
                    let n = caps
                        .name("n")
                        .and_then(|m| m.as_str().parse::<usize>().ok())
                        .unwrap_or(5)
                        .min(50);
                    (1..=n)
                        .map(|i| format!("{i}. {}", invent_name(rng)))
                        .collect::<Vec<_>>()
                        .join("\n")
                } else if let Some(options) = name.strip_prefix("pick:") {
                    let options: Vec<&str> = options.split('|').collect();
                    rng.choose(&options).copied().unwrap_or_default().to_string()
                } else {
                    caps.name(name).map_or(String::new(), |m| m.as_str().to_string())
                }
            })
            .into_owned()
    }
}

fn invent_name(rng: &mut SplitMix64) -> String {
    let n = 2 + rng.below(3);
    let mut name: String = (0..n)
        .map(|_| *rng.choose(SYLLABLES).expect("non-empty"))
        .collect();
    if let Some(first) = name.get(..1) {
        name = first.to_uppercase() + &name[1..];
    }
    name
}

impl LlmBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        if request.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        let text = self.respond(&request.prompt, request.sample)?;
        Ok(CompletionResponse {
            text,
            finish_reason: Some("stop".into()),
            usage: None,
            created: None,
            from_cache: false,
        })
    }
}
