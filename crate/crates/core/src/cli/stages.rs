//! Stage runners. Each stage reads the files listed in the previous stage's
//! manifest from the output directory and writes its own outputs plus
//! `<stage>.manifest.json`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::Serialize;

use crate::corpus::conll::serialize_sentences;
use crate::corpus::{
    entity_type_counts, parse_conll, Corpus, EntitySchema, ParseOptions, TaggedSentence,
};
use crate::entity_aug::{augment_pool, EntityAugError};
use crate::evaluation::{aggregate_runs, emit_report, micro_f1, ReportFormat, ScoreReport, StdKind};
use crate::instance_aug::{augment_corpus, InstanceAugError};
use crate::llm::{DiskCache, Gateway, HttpBackend, LlmBackend, MockBackend, MockScenario};
use crate::pool::EntityPool;
use crate::record::{write_jsonl, GenerationRecord, Verdict};
use crate::selection::select;

use super::config::PipelineConfig;
use super::manifest::{entry_for_bytes, entry_for_file, Manifest};
use super::CliError;

pub const DEMOS: &str = "demos.conll";
pub const SCHEMA: &str = "schema.json";
pub const SELECTION: &str = "selection.json";
pub const POOL: &str = "pool.json";
pub const ENTITY_AUDIT: &str = "entity_audit.jsonl";
pub const GENERATED: &str = "generated.conll";
pub const INSTANCE_AUDIT: &str = "instance_audit.jsonl";
pub const SHORTFALLS: &str = "shortfalls.json";
pub const MERGED: &str = "train_augmented.conll";
pub const PIPELINE_MANIFEST: &str = "manifest.json";

/// A resolved config plus run-time switches.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub mock: bool,
}

impl Context {
    pub fn new(mut config: PipelineConfig, out: Option<PathBuf>, mock: bool) -> Result<Self, CliError> {
        config.finalize()?;
        let out = match out {
            Some(o) => o,
            None => config.output_dir()?,
        };
        Ok(Self { config, out, mock })
    }

    fn backend_name(&self) -> String {
        if self.mock { "mock".into() } else { "http".into() }
    }

    fn manifest(&self, stage: &str) -> Manifest {
        let mut m = Manifest::new(stage, self.config.snapshot());
        m.backend = Some(self.backend_name());
        m
    }

    fn ensure_out(&self) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))
    }

    /// The configured backend behind the gateway, with cache and
    /// concurrency limit applied.
    pub fn gateway(&self) -> Result<Gateway, CliError> {
        let cfg = &self.config;
        let backend: Arc<dyn LlmBackend> = if self.mock {
            let scenario = match &cfg.paths.mock_scenario {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                    MockScenario::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?
                }
                None => MockScenario::eka_default(),
            };
            Arc::new(MockBackend::new(scenario, cfg.seed).map_err(|e| CliError::Config(e.to_string()))?)
        } else {
            let backend = HttpBackend::new(&cfg.llm).map_err(|e| CliError::Config(e.to_string()))?;
            Arc::new(backend)
        };
        let mut gateway = Gateway::new(backend, cfg.llm.params())
            .with_concurrency_limit(cfg.llm.concurrency_limit);
        if let Some(dir) = &cfg.llm.cache_dir {
            let cache = DiskCache::open(dir).map_err(|e| CliError::Config(e.to_string()))?;
            gateway = gateway.with_cache(cache);
        }
        Ok(gateway)
    }
}

fn write_output(dir: &Path, name: &str, bytes: &[u8], manifest: &mut Manifest) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    manifest.outputs.push(entry_for_bytes(name, bytes));
    Ok(())
}

fn records_jsonl(records: &[GenerationRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).expect("writing to a Vec cannot fail");
    buf
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn load_schema(path: &Path) -> Result<EntitySchema, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("schema {}: {e}", path.display())))?;
    EntitySchema::parse(&text).map_err(|e| CliError::Config(format!("schema {}: {e}", path.display())))
}

fn parse_bytes(bytes: &[u8], schema: Option<&EntitySchema>, what: &str) -> Result<Corpus, CliError> {
    let options = match schema {
        Some(s) => ParseOptions::with_schema(s.clone()),
        None => ParseOptions::default(),
    };
    parse_conll(bytes, &options).map_err(|e| CliError::Data(format!("{what}: {e}")))
}

pub fn load_corpus(path: &Path, schema: Option<&EntitySchema>) -> Result<Corpus, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_bytes(&bytes, schema, &path.display().to_string())
}

fn parse_schema_bytes(bytes: &[u8]) -> Result<EntitySchema, CliError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CliError::Data(format!("{SCHEMA}: {e}")))?;
    EntitySchema::parse(text).map_err(|e| CliError::Data(format!("{SCHEMA}: {e}")))
}

/// Sentence and mention counts of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub mentions: usize,
    pub per_type: IndexMap<String, usize>,
}

pub fn cmd_stats(corpus: &Corpus) -> CorpusStats {
    CorpusStats {
        sentences: corpus.len(),
        tokens: corpus.sentences().iter().map(TaggedSentence::len).sum(),
        mentions: corpus.span_count(),
        per_type: entity_type_counts(corpus),
    }
}

impl CorpusStats {
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "sentences\t{}\ntokens\t{}\nmentions\t{}\n",
            self.sentences, self.tokens, self.mentions
        );
        for (ty, n) in &self.per_type {
            out.push_str(&format!("{ty}\t{n}\n"));
        }
        out
    }
}

/// Demonstrations followed by generated sentences, dropping any sentence
/// whose tokens and tags equal an earlier one.
pub fn merge_sentences(demos: &[TaggedSentence], generated: &[TaggedSentence]) -> Vec<TaggedSentence> {
    let mut seen = HashSet::new();
    demos
        .iter()
        .chain(generated)
        .filter(|s| seen.insert(s.tokens().to_vec()))
        .cloned()
        .collect()
}

pub fn run_select(ctx: &Context) -> Result<Manifest, CliError> {
    let cfg = &ctx.config;
    let schema_path = cfg.require("schema", &cfg.paths.schema)?;
    let train_path = cfg.require("train", &cfg.paths.train)?;
    let schema = load_schema(&schema_path)?;
    let corpus = load_corpus(&train_path, Some(&schema))?;

    let result = select(&corpus, &schema, &cfg.selection).map_err(|e| match e {
        crate::selection::SelectionError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Data(other.to_string()),
    })?;
    let sidecar = result.sidecar(&cfg.selection);
    if !result.satisfied {
        log::warn!("selection could not reach k for {:?}", result.deficient);
    }

    ctx.ensure_out()?;
    let mut m = ctx.manifest("select");
    m.backend = None;
    m.inputs.push(entry_for_file("train", &train_path)?);
    m.inputs.push(entry_for_file("schema", &schema_path)?);
    write_output(&ctx.out, SCHEMA, format!("{}\n", schema.to_json()).as_bytes(), &mut m)?;
    write_output(&ctx.out, DEMOS, &serialize_sentences(&result.demos), &mut m)?;
    write_output(&ctx.out, SELECTION, &json_bytes(&sidecar), &mut m)?;
    if !result.satisfied {
        m.warnings.push(format!("k not reached for {}", result.deficient.join(", ")));
    }
    m.write(&ctx.out)?;
    Ok(m)
}

pub fn run_augment_entities(ctx: &Context, gateway: &Gateway) -> Result<Manifest, CliError> {
    let cfg = &ctx.config;
    let prev = Manifest::read(&ctx.out, "select")?;
    let schema_bytes = prev.read_listed(&ctx.out, SCHEMA)?;
    let demo_bytes = prev.read_listed(&ctx.out, DEMOS)?;
    let schema = parse_schema_bytes(&schema_bytes)?;
    let demos = parse_bytes(&demo_bytes, Some(&schema), DEMOS)?;

    let mut pool = EntityPool::from_corpus(&demos, cfg.entity_aug.normalization);
    let outcomes = augment_pool(&mut pool, &schema, &cfg.entity_aug, &cfg.prompts, gateway);

    let mut m = ctx.manifest("entities");
    m.inputs.push(entry_for_bytes(SCHEMA, &schema_bytes));
    m.inputs.push(entry_for_bytes(DEMOS, &demo_bytes));
    let records: Vec<GenerationRecord> = outcomes.iter().flat_map(|o| o.records.clone()).collect();
    let mut failure = None;
    for o in &outcomes {
        match &o.error {
            None => {}
            Some(e @ EntityAugError::Backend { .. }) => {
                failure.get_or_insert_with(|| CliError::Backend(format!("{}: {e}", o.entity_type)));
            }
            Some(EntityAugError::InvalidConfig(msg)) => {
                failure.get_or_insert_with(|| CliError::Config(msg.clone()));
            }
            Some(e) => {
                log::warn!("entity augmentation for {}: {e}", o.entity_type);
                m.warnings.push(format!("{}: {e}", o.entity_type));
            }
        }
    }
    write_output(&ctx.out, POOL, format!("{}\n", pool.to_json()).as_bytes(), &mut m)?;
    write_output(&ctx.out, ENTITY_AUDIT, &records_jsonl(&records), &mut m)?;
    if let Some(err) = failure {
        return Err(err);
    }
    m.write(&ctx.out)?;
    Ok(m)
}

pub fn run_augment_instances(ctx: &Context, gateway: &Gateway) -> Result<Manifest, CliError> {
    let cfg = &ctx.config;
    let prev = Manifest::read(&ctx.out, "entities")?;
    let schema_bytes = prev.read_listed(&ctx.out, SCHEMA)?;
    let demo_bytes = prev.read_listed(&ctx.out, DEMOS)?;
    let pool_bytes = prev.read_listed(&ctx.out, POOL)?;
    let schema = parse_schema_bytes(&schema_bytes)?;
    let demos = parse_bytes(&demo_bytes, Some(&schema), DEMOS)?;
    let pool_text = std::str::from_utf8(&pool_bytes).map_err(|e| CliError::Data(format!("{POOL}: {e}")))?;
    let pool = EntityPool::from_json(pool_text, &schema, cfg.entity_aug.normalization)
        .map_err(|e| CliError::Data(format!("{POOL}: {e}")))?;

    let output = augment_corpus(
        demos.sentences(),
        &pool,
        &schema,
        &cfg.instance_aug,
        &cfg.prompts,
        gateway,
    )
    .map_err(|e| match e {
        InstanceAugError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::Data(other.to_string()),
    })?;

    let merged = merge_sentences(demos.sentences(), &output.sentences);
    let merged = demos
        .with_sentences(merged)
        .map_err(|e| CliError::Data(format!("merged corpus: {e}")))?;

    let mut m = ctx.manifest("instances");
    m.inputs.push(entry_for_bytes(SCHEMA, &schema_bytes));
    m.inputs.push(entry_for_bytes(DEMOS, &demo_bytes));
    m.inputs.push(entry_for_bytes(POOL, &pool_bytes));
    write_output(&ctx.out, GENERATED, &serialize_sentences(&output.sentences), &mut m)?;
    write_output(&ctx.out, INSTANCE_AUDIT, &records_jsonl(&output.records), &mut m)?;
    write_output(&ctx.out, SHORTFALLS, &json_bytes(&output.shortfalls), &mut m)?;
    write_output(&ctx.out, MERGED, &serialize_sentences(merged.sentences()), &mut m)?;
    if !output.shortfalls.is_empty() {
        m.warnings.push(format!("{} entities below the instance target", output.shortfalls.len()));
    }

    let all_backend_errors = !output.records.is_empty()
        && output
            .records
            .iter()
            .all(|r| r.verdict == Verdict::RejectedBackendError);
    if all_backend_errors {
        let detail = output.records[0].detail.clone().unwrap_or_default();
        return Err(CliError::Backend(format!("every instance request failed: {detail}")));
    }
    m.write(&ctx.out)?;
    Ok(m)
}

/// Scores one or more prediction files against gold; several files are
/// aggregated as runs.
pub fn score_files(
    gold: &Path,
    preds: &[PathBuf],
    schema: Option<&EntitySchema>,
    std: StdKind,
) -> Result<ScoreReport, CliError> {
    let gold = load_corpus(gold, schema)?;
    let reports = preds
        .iter()
        .map(|p| {
            let pred = load_corpus(p, None)?;
            micro_f1(&gold, &pred).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    match reports.len() {
        0 => Err(CliError::Config("no prediction files given".into())),
        1 => Ok(reports.into_iter().next().expect("one report")),
        _ => aggregate_runs(&reports, std).map_err(|e| CliError::Data(e.to_string())),
    }
}

/// Select, augment entities, augment instances, then score when
/// predictions are configured. Writes `manifest.json` covering every
/// output on success; stage outputs written before a failure stay on disk.
pub fn run_pipeline(ctx: &Context) -> Result<Manifest, CliError> {
    let cfg = &ctx.config;
    let gateway = ctx.gateway()?;
    let select_m = run_select(ctx)?;
    let entities_m = run_augment_entities(ctx, &gateway)?;
    let instances_m = run_augment_instances(ctx, &gateway)?;
    let stats = gateway.stats();
    log::info!(
        "backend calls: {}, cache hits: {}",
        stats.backend_calls,
        stats.cache_hits
    );

    let mut m = ctx.manifest("pipeline");
    m.inputs = select_m.inputs.clone();
    for stage in [&select_m, &entities_m, &instances_m] {
        m.outputs.extend(stage.outputs.iter().cloned());
        m.warnings.extend(stage.warnings.iter().map(|w| format!("{}: {w}", stage.stage)));
        let name = Manifest::file_name(&stage.stage);
        m.outputs.push(entry_for_bytes(name, &stage.to_bytes()));
    }

    if cfg.paths.predictions.is_some() {
        let test = cfg.require("test", &cfg.paths.test)?;
        let pred = cfg.require("predictions", &cfg.paths.predictions)?;
        let schema = parse_schema_bytes(&select_m.read_listed(&ctx.out, SCHEMA)?)?;
        let report = score_files(&test, std::slice::from_ref(&pred), Some(&schema), StdKind::Sample)?;
        m.inputs.push(entry_for_file("test", &test)?);
        m.inputs.push(entry_for_file("predictions", &pred)?);
        for format in [ReportFormat::Tsv, ReportFormat::Json] {
            let name = format!("scores.{}", format.extension());
            write_output(&ctx.out, &name, &emit_report(&report, format), &mut m)?;
        }
    }

    let path = ctx.out.join(PIPELINE_MANIFEST);
    std::fs::write(&path, m.to_bytes()).map_err(|e| CliError::io(&path, e))?;
    Ok(m)
}
