//! Audit records for LLM calls and the JSON-lines log they are written to.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    EntityAugmentation,
    InstanceAugmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    RejectedMissingEntity,
    RejectedForeignEntity,
    RejectedSelfVerification,
    RejectedBackendError,
    /// Entity stage: the response parsed to nothing.
    RejectedUnparseable,
    /// Entity stage: every parsed entity was already known.
    RejectedNoNewEntities,
}

impl Verdict {
    pub fn is_accepted(self) -> bool {
        self == Verdict::Accepted
    }
}

/// Everything about one generation attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub stage: Stage,
    #[serde(rename = "type")]
    pub entity_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_id: Option<String>,
    pub sample: u32,
    pub prompt: String,
    pub raw_response: Option<String>,
    pub verdict: Verdict,
    /// Error message, or the foreign entity that caused a rejection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub accepted_entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_response: Option<String>,
    /// Unix seconds at which the backend produced the response, when known.
    /// Replayed unchanged from the response cache.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl GenerationRecord {
    pub fn new(stage: Stage, entity_type: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            stage,
            entity_type: entity_type.into(),
            entity: None,
            demo_id: None,
            sample: 0,
            prompt: prompt.into(),
            raw_response: None,
            verdict: Verdict::RejectedBackendError,
            detail: None,
            accepted_entities: Vec::new(),
            verification_prompt: None,
            verification_response: None,
            timestamp: None,
        }
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[GenerationRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl(text: &str) -> Result<Vec<GenerationRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
