//! Generation of new tagged sentences around pooled entities.
//!
//! Each (type, entity) in scope is paired round-robin with a demonstration.
//! A generated text is whitespace-tokenized and the target entity is tagged
//! wherever it occurs. The sentence is kept only if:
//!
//! 1. the entity occurs at least once,
//! 2. no other gazetteer surface occurs outside the tagged target spans,
//! 3. the self-verification call (when enabled) answers yes/no.
//!
//! Every generation attempt produces exactly one [`GenerationRecord`].

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{spans_to_bio, EntitySchema, EntitySpan, EntityType, Origin, TaggedSentence};
use crate::entity_aug::augmentation_scope;
use crate::llm::Completer;
use crate::matching::{find_occurrences, Gazetteer, Matcher};
use crate::pool::{EntityPool, Provenance};
use crate::prompt::{render, PromptTemplates};
use crate::record::{GenerationRecord, Stage, Verdict};

/// Which pool entries receive generated instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntitySource {
    #[default]
    All,
    Generated,
    Seed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceAugConfig {
    pub instances_per_entity: usize,
    /// Attempts per (demonstration, entity) pair.
    pub max_attempts: usize,
    pub enable_self_verification: bool,
    pub matcher: Matcher,
    /// Generate for every schema type instead of only domain-specific ones.
    pub all_types: bool,
    pub entity_source: EntitySource,
    /// Entities processed concurrently.
    pub max_in_flight: usize,
}

impl Default for InstanceAugConfig {
    fn default() -> Self {
        Self {
            instances_per_entity: 1,
            max_attempts: 3,
            enable_self_verification: false,
            matcher: Matcher::Casefold,
            all_types: false,
            entity_source: EntitySource::All,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceAugError {
    #[error("invalid instance augmentation config: {0}")]
    InvalidConfig(String),
    #[error("no demonstrations to prompt with")]
    NoDemonstrations,
}

impl InstanceAugConfig {
    pub fn validate(&self) -> Result<(), InstanceAugError> {
        if self.instances_per_entity < 1 {
            return Err(InstanceAugError::InvalidConfig(
                "instances_per_entity must be >= 1".into(),
            ));
        }
        if self.max_attempts < 1 {
            return Err(InstanceAugError::InvalidConfig("max_attempts must be >= 1".into()));
        }
        if self.max_in_flight < 1 {
            return Err(InstanceAugError::InvalidConfig("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn render_instance_prompt(
    templates: &PromptTemplates,
    demo: &TaggedSentence,
    entity: &str,
    entity_type: &EntityType,
) -> String {
    let demonstration = demo.text();
    render(
        &templates.instance,
        &[
            ("domain", templates.domain.as_str()),
            ("demonstration", demonstration.as_str()),
            ("entity", entity),
            ("type", entity_type.name.as_str()),
        ],
    )
}

/// Tags every occurrence of `entity` in `text`, or returns
/// `Verdict::RejectedMissingEntity`.
pub fn align_and_tag(
    text: &str,
    entity: &str,
    entity_type: &EntityType,
    matcher: Matcher,
) -> Result<TaggedSentence, Verdict> {
    let surfaces: Vec<&str> = text.split_whitespace().collect();
    let pattern = matcher.pattern(entity).ok_or(Verdict::RejectedMissingEntity)?;
    let normalized = matcher.normalize_tokens(surfaces.iter().copied());
    let hits = find_occurrences(&normalized, &pattern);
    if hits.is_empty() {
        return Err(Verdict::RejectedMissingEntity);
    }
    let spans: Vec<EntitySpan> = hits
        .into_iter()
        .map(|start| EntitySpan {
            start,
            end: start + pattern.len(),
            entity_type: entity_type.name.clone(),
            surface: String::new(),
        })
        .collect();
    spans_to_bio(&surfaces, &spans).map_err(|_| Verdict::RejectedMissingEntity)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterDecision {
    Accept,
    /// A known surface other than the target occurs in the sentence.
    Reject { foreign: String },
}

impl FilterDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, FilterDecision::Accept)
    }
}

/// Rejects a sentence in which any gazetteer surface other than `target`
/// occurs outside the sentence's tagged spans.
pub fn lexicon_filter(
    sentence: &TaggedSentence,
    gazetteer: &Gazetteer,
    target: &str,
) -> FilterDecision {
    let matcher = gazetteer.matcher();
    let target_pattern = matcher.pattern(target);
    let tokens = matcher.normalize_tokens(sentence.surfaces());
    let protected = sentence.spans();
    for hit in gazetteer.scan(&tokens) {
        if matcher.pattern(&hit.surface) == target_pattern {
            continue;
        }
        let inside_target = protected
            .iter()
            .any(|s| s.start <= hit.start && hit.end <= s.end);
        if !inside_target {
            return FilterDecision::Reject {
                foreign: hit.surface,
            };
        }
    }
    FilterDecision::Accept
}

/// Convenience wrapper building the gazetteer from a pool.
pub fn lexicon_filter_pool(
    sentence: &TaggedSentence,
    pool: &EntityPool,
    target: &str,
    matcher: Matcher,
) -> FilterDecision {
    let gazetteer = Gazetteer::new(matcher, pool.iter().map(|(ty, e)| (ty, e.surface.as_str())));
    lexicon_filter(sentence, &gazetteer, target)
}

pub fn render_verification_prompt(
    templates: &PromptTemplates,
    sentence: &TaggedSentence,
    entity: &str,
    entity_type: &EntityType,
) -> String {
    let text = sentence.text();
    render(
        &templates.verification,
        &[
            ("domain", templates.domain.as_str()),
            ("sentence", text.as_str()),
            ("entity", entity),
            ("type", entity_type.name.as_str()),
        ],
    )
}

/// Reads the first two yes/no answers. `None` if fewer than two answers can
/// be read.
pub fn parse_verification(raw: &str) -> Option<(bool, bool)> {
    let mut lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() == 1 {
        lines = lines[0].split([',', ';']).map(str::trim).collect();
    }
    if lines.len() < 2 {
        return None;
    }
    Some((yes_no(lines[0])?, yes_no(lines[1])?))
}

fn yes_no(line: &str) -> Option<bool> {
    let lower = line.to_lowercase();
    let mut s = lower.trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')');
    s = s.trim_start();
    s = s.strip_prefix("answer:").unwrap_or(s).trim_start();
    let word: String = s.chars().take_while(|c| c.is_alphabetic()).collect();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationOutcome {
    pub verdict: Verdict,
    pub prompt: String,
    pub response: Option<String>,
    pub detail: Option<String>,
}

impl VerificationOutcome {
    pub fn accepted(&self) -> bool {
        self.verdict.is_accepted()
    }
}

/// Asks the backend whether the entity fits the type and domain and whether
/// the sentence introduces other entities. Accepts only on (yes, no); fails
/// closed on anything else.
pub fn self_verify(
    sentence: &TaggedSentence,
    entity: &str,
    entity_type: &EntityType,
    templates: &PromptTemplates,
    completer: &dyn Completer,
    sample: u32,
) -> VerificationOutcome {
    let prompt = render_verification_prompt(templates, sentence, entity, entity_type);
    match completer.complete_prompt(&prompt, sample) {
        Err(e) => VerificationOutcome {
            verdict: Verdict::RejectedBackendError,
            prompt,
            response: None,
            detail: Some(format!("verification: {e}")),
        },
        Ok(resp) => {
            let (verdict, detail) = match parse_verification(&resp.text) {
                Some((true, false)) => (Verdict::Accepted, None),
                Some(answers) => (
                    Verdict::RejectedSelfVerification,
                    Some(format!("answers {answers:?}")),
                ),
                None => (
                    Verdict::RejectedSelfVerification,
                    Some("unparseable verification answer".into()),
                ),
            };
            VerificationOutcome {
                verdict,
                prompt,
                response: Some(resp.text),
                detail,
            }
        }
    }
}

/// An entity for which fewer than `instances_per_entity` sentences were
/// accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityShortfall {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub entity: String,
    pub accepted: usize,
    pub wanted: usize,
    pub last_verdict: Verdict,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceAugOutput {
    pub sentences: Vec<TaggedSentence>,
    pub records: Vec<GenerationRecord>,
    pub shortfalls: Vec<EntityShortfall>,
}

struct Job<'a> {
    entity_type: &'a EntityType,
    entity: String,
}

#[derive(Default)]
struct JobResult {
    sentences: Vec<TaggedSentence>,
    records: Vec<GenerationRecord>,
    shortfall: Option<EntityShortfall>,
}

pub fn demo_id(demo: &TaggedSentence, index: usize) -> String {
    demo.meta()
        .map_or_else(|| format!("demo-{index}"), str::to_string)
}

struct Ctx<'a> {
    demos: &'a [TaggedSentence],
    gazetteer: &'a Gazetteer,
    config: &'a InstanceAugConfig,
    templates: &'a PromptTemplates,
    completer: &'a dyn Completer,
}

fn attempt(ctx: &Ctx<'_>, job: &Job<'_>, demo_index: usize, sample: u32) -> (GenerationRecord, Option<TaggedSentence>) {
    let demo = &ctx.demos[demo_index];
    let prompt = render_instance_prompt(ctx.templates, demo, &job.entity, job.entity_type);
    let mut record = GenerationRecord::new(Stage::InstanceAugmentation, &job.entity_type.name, &prompt);
    record.entity = Some(job.entity.clone());
    record.demo_id = Some(demo_id(demo, demo_index));
    record.sample = sample;

    let response = match ctx.completer.complete_prompt(&prompt, sample) {
        Ok(r) => r,
        Err(e) => {
            record.verdict = Verdict::RejectedBackendError;
            record.detail = Some(e.to_string());
            return (record, None);
        }
    };
    record.timestamp = response.created;
    record.raw_response = Some(response.text.clone());

    let sentence = match align_and_tag(&response.text, &job.entity, job.entity_type, ctx.config.matcher) {
        Ok(s) => s,
        Err(v) => {
            record.verdict = v;
            return (record, None);
        }
    };
    if let FilterDecision::Reject { foreign } = lexicon_filter(&sentence, ctx.gazetteer, &job.entity) {
        record.verdict = Verdict::RejectedForeignEntity;
        record.detail = Some(foreign);
        return (record, None);
    }
    if ctx.config.enable_self_verification {
        let check = self_verify(&sentence, &job.entity, job.entity_type, ctx.templates, ctx.completer, sample);
        record.verification_prompt = Some(check.prompt);
        record.verification_response = check.response;
        if !check.verdict.is_accepted() {
            record.verdict = check.verdict;
            record.detail = check.detail;
            return (record, None);
        }
    }
    record.verdict = Verdict::Accepted;
    let meta = format!("{}|{}|{}|{}", record.demo_id.as_deref().unwrap_or(""), job.entity_type.name, job.entity, sample);
    (
        record,
        Some(sentence.with_origin(Origin::Generated).with_meta(Some(meta))),
    )
}

fn run_job(ctx: &Ctx<'_>, job_index: usize, job: &Job<'_>) -> JobResult {
    let mut out = JobResult::default();
    let per_entity = ctx.config.instances_per_entity;
    let mut last_verdict = Verdict::Accepted;
    for slot in 0..per_entity {
        let demo_index = (job_index * per_entity + slot) % ctx.demos.len();
        for try_no in 0..ctx.config.max_attempts {
            let sample = (slot * ctx.config.max_attempts + try_no) as u32;
            let (record, sentence) = attempt(ctx, job, demo_index, sample);
            last_verdict = record.verdict;
            out.records.push(record);
            if let Some(s) = sentence {
                out.sentences.push(s);
                break;
            }
        }
    }
    if out.sentences.len() < per_entity {
        log::warn!(
            "{} {:?}: {} of {} instances accepted (last verdict {:?})",
            job.entity_type.name,
            job.entity,
            out.sentences.len(),
            per_entity,
            last_verdict
        );
        out.shortfall = Some(EntityShortfall {
            entity_type: job.entity_type.name.clone(),
            entity: job.entity.clone(),
            accepted: out.sentences.len(),
            wanted: per_entity,
            last_verdict,
        });
    }
    out
}

/// Generates instances for every in-scope pool entity.
///
/// Entities are processed by up to `max_in_flight` workers; the output is
/// assembled in (type, entity, attempt) order regardless of completion order.
/// The gazetteer for the lexicon filter is the whole pool plus
/// `extra_gazetteer`.
pub fn augment_corpus(
    demos: &[TaggedSentence],
    pool: &EntityPool,
    schema: &EntitySchema,
    config: &InstanceAugConfig,
    templates: &PromptTemplates,
    completer: &dyn Completer,
) -> Result<InstanceAugOutput, InstanceAugError> {
    augment_corpus_with_gazetteer(demos, pool, schema, config, templates, completer, &[])
}

pub fn augment_corpus_with_gazetteer(
    demos: &[TaggedSentence],
    pool: &EntityPool,
    schema: &EntitySchema,
    config: &InstanceAugConfig,
    templates: &PromptTemplates,
    completer: &dyn Completer,
    extra_gazetteer: &[(String, String)],
) -> Result<InstanceAugOutput, InstanceAugError> {
    config.validate()?;
    let jobs: Vec<Job<'_>> = augmentation_scope(schema, config.all_types)
        .into_iter()
        .flat_map(|ty| {
            pool.entries(&ty.name)
                .iter()
                .filter(|e| match config.entity_source {
                    EntitySource::All => true,
                    EntitySource::Generated => e.provenance == Provenance::Generated,
                    EntitySource::Seed => e.provenance == Provenance::Seed,
                })
                .map(move |e| Job {
                    entity_type: ty,
                    entity: e.surface.clone(),
                })
        })
        .collect();
    if jobs.is_empty() {
        return Ok(InstanceAugOutput::default());
    }
    if demos.is_empty() {
        return Err(InstanceAugError::NoDemonstrations);
    }

    let gazetteer = Gazetteer::new(
        config.matcher,
        pool.iter()
            .map(|(ty, e)| (ty, e.surface.as_str()))
            .chain(extra_gazetteer.iter().map(|(t, s)| (t.as_str(), s.as_str()))),
    );
    let ctx = Ctx {
        demos,
        gazetteer: &gazetteer,
        config,
        templates,
        completer,
    };

    let results: Mutex<Vec<Option<JobResult>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = config.max_in_flight.min(jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = run_job(&ctx, i, &jobs[i]);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut output = InstanceAugOutput::default();
    for r in results.into_inner().expect("results lock").into_iter().flatten() {
        output.sentences.extend(r.sentences);
        output.records.extend(r.records);
        output.shortfalls.extend(r.shortfall);
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;

    fn drug() -> EntityType {
        EntityType::new("Drug", true)
    }

    fn tags(s: &TaggedSentence) -> Vec<String> {
        s.tags().map(|t| t.to_string()).collect()
    }

    #[test]
    fn instance_prompt_exact_text() {
        let demo = TaggedSentence::new(
            ["I", "got", "my", "shot"].iter().map(|w| Token::outside(*w)).collect(),
        )
        .unwrap();
        let p = render_instance_prompt(&PromptTemplates::default(), &demo, "Moderna", &EntityType::new("Vaccine", true));
        assert_eq!(
            p,
            "Take the sentence as an example I got my shot, please generate a new COVID-19 tweet which only has the Moderna, without introducing any other named entity."
        );
        let other = render_instance_prompt(&PromptTemplates::default(), &demo, "Pfizer", &EntityType::new("Vaccine", true));
        assert_ne!(p, other);
    }

    #[test]
    fn align_single_and_repeated() {
        let s = align_and_tag("Just took Paxlovid today", "Paxlovid", &drug(), Matcher::Casefold).unwrap();
        assert_eq!(tags(&s), ["O", "O", "B-Drug", "O"]);
        assert_eq!(
            align_and_tag("no mention here", "Paxlovid", &drug(), Matcher::Casefold),
            Err(Verdict::RejectedMissingEntity)
        );
        let s = align_and_tag("Paxlovid then more Paxlovid", "Paxlovid", &drug(), Matcher::Casefold).unwrap();
        assert_eq!(tags(&s), ["B-Drug", "O", "O", "B-Drug"]);
        let s = align_and_tag("the Pfizer BioNTech shot!", "pfizer biontech", &drug(), Matcher::Casefold).unwrap();
        assert_eq!(tags(&s), ["O", "B-Drug", "I-Drug", "O"]);
        assert!(align_and_tag("PAXLOVID.", "Paxlovid", &drug(), Matcher::Exact).is_err());
        assert!(align_and_tag("Paxlovid.", "Paxlovid", &drug(), Matcher::Exact).is_ok());
        assert!(align_and_tag("", "Paxlovid", &drug(), Matcher::Casefold).is_err());
    }

    #[test]
    fn filter_examples() {
        let g = Gazetteer::new(
            Matcher::Casefold,
            [("Drug", "Paxlovid"), ("Vaccine", "Pfizer"), ("Vaccine", "Pfizer BioNTech")],
        );
        let only = align_and_tag("took paxlovid", "Paxlovid", &drug(), Matcher::Casefold).unwrap();
        assert!(lexicon_filter(&only, &g, "Paxlovid").is_accept());
        let both = align_and_tag("Paxlovid after Pfizer", "Paxlovid", &drug(), Matcher::Casefold).unwrap();
        assert_eq!(
            lexicon_filter(&both, &g, "Paxlovid"),
            FilterDecision::Reject { foreign: "Pfizer".into() }
        );
        // A shorter pooled surface inside the target span is not foreign.
        let vax = EntityType::new("Vaccine", true);
        let s = align_and_tag("got Pfizer BioNTech", "Pfizer BioNTech", &vax, Matcher::Casefold).unwrap();
        assert!(lexicon_filter(&s, &g, "Pfizer BioNTech").is_accept());
    }

    #[test]
    fn verification_parsing() {
        assert_eq!(parse_verification("yes\nno"), Some((true, false)));
        assert_eq!(parse_verification("1. Yes.\n2. No, nothing else."), Some((true, false)));
        assert_eq!(parse_verification("Yes, no"), Some((true, false)));
        assert_eq!(parse_verification("no\nno"), Some((false, false)));
        assert_eq!(parse_verification("Answer: yes\nAnswer: yes"), Some((true, true)));
        assert_eq!(parse_verification("garbage"), None);
        assert_eq!(parse_verification("yes"), None);
        assert_eq!(parse_verification("yesterday\nno"), None);
        assert_eq!(parse_verification(""), None);
    }
}
