//! Entity and instance augmentation for low-resource NER with a chat LLM.
//!
//! The pipeline picks demonstration sentences from a BIO-tagged corpus,
//! grows an entity pool per type by prompting the model, writes new
//! sentences around pooled entities, filters them, and scores tagger
//! predictions with exact-match entity F1.

pub mod cli;
pub mod corpus;
pub mod entity_aug;
pub mod evaluation;
pub mod instance_aug;
pub mod llm;
pub mod matching;
pub mod pool;
pub mod prompt;
pub mod record;
pub mod rng;
pub mod selection;
