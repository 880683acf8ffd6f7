//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure on outputs, 2 configuration error,
//! 3 data error, 4 backend error.

pub mod config;
pub mod manifest;
pub mod stages;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::entity_aug::Strategy;
use crate::evaluation::{emit_report, ReportFormat, StdKind};
use crate::selection::SelectionMode;

use config::PipelineConfig;
use stages::{
    cmd_stats, load_corpus, load_schema, run_augment_entities, run_augment_instances,
    run_pipeline, run_select, score_files, Context,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Backend(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eka", version, about = "LLM-driven entity and instance augmentation for NER corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    FewShot,
    FullySupervised,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Straightforward,
    Iterative,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Tsv,
    Json,
    Markdown,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StdArg {
    Sample,
    Population,
}

/// Options shared by the config-driven stages. Flags override the file.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Pipeline config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Output directory; overrides `paths.output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use the seeded mock backend instead of HTTP.
    #[arg(long)]
    pub mock: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// New entities per type.
    #[arg(long)]
    pub n_new: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Ask the model to verify each generated sentence.
    #[arg(long)]
    pub self_verify: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sentence and entity-type counts of a CoNLL file.
    Stats {
        input: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tsv")]
        format: FormatArg,
    },
    /// Select demonstration sentences.
    Select(RunArgs),
    /// Grow the entity pool from the selected demonstrations.
    AugmentEntities(RunArgs),
    /// Generate sentences for pooled entities and write the merged corpus.
    AugmentInstances(RunArgs),
    /// Entity-level micro F1 of predictions against gold.
    Score {
        #[arg(long)]
        gold: PathBuf,
        /// Prediction file; repeat to aggregate runs as mean and std.
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "tsv")]
        format: FormatArg,
        #[arg(long, value_enum, default_value = "sample")]
        std: StdArg,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run select, augment-entities and augment-instances in sequence.
    Pipeline(RunArgs),
}

impl RunArgs {
    pub fn context(&self) -> Result<Context, CliError> {
        let mut config = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(k) = self.k {
            config.selection.k = k;
        }
        if let Some(alpha) = self.alpha {
            config.selection.alpha = alpha;
        }
        if let Some(mode) = self.mode {
            config.mode = Some(match mode {
                ModeArg::FewShot => SelectionMode::FewShot,
                ModeArg::FullySupervised => SelectionMode::FullySupervised,
            });
        }
        if let Some(strategy) = self.strategy {
            config.entity_aug.strategy = match strategy {
                StrategyArg::Straightforward => Strategy::Straightforward,
                StrategyArg::Iterative => Strategy::Iterative,
            };
        }
        if let Some(n) = self.n_new {
            config.entity_aug.n_new = n;
        }
        if let Some(dir) = &self.cache_dir {
            config.paths.cache_dir = Some(dir.clone());
        }
        if self.self_verify {
            config.instance_aug.enable_self_verification = true;
        }
        Context::new(config, self.out.clone(), self.mock)
    }
}

fn report_format(f: FormatArg) -> ReportFormat {
    match f {
        FormatArg::Tsv => ReportFormat::Tsv,
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Markdown => ReportFormat::Markdown,
    }
}

fn print(bytes: &[u8]) -> Result<(), CliError> {
    std::io::stdout()
        .write_all(bytes)
        .map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Stats {
            input,
            schema,
            format,
        } => {
            let schema = schema.as_deref().map(load_schema).transpose()?;
            let corpus = load_corpus(&input, schema.as_ref())?;
            let stats = cmd_stats(&corpus);
            match format {
                FormatArg::Json => {
                    let mut s = serde_json::to_string_pretty(&stats).expect("stats serialize");
                    s.push('\n');
                    print(s.as_bytes())
                }
                _ => print(stats.to_tsv().as_bytes()),
            }
        }
        Command::Select(args) => run_select(&args.context()?).map(drop),
        Command::AugmentEntities(args) => {
            let ctx = args.context()?;
            run_augment_entities(&ctx, &ctx.gateway()?).map(drop)
        }
        Command::AugmentInstances(args) => {
            let ctx = args.context()?;
            run_augment_instances(&ctx, &ctx.gateway()?).map(drop)
        }
        Command::Score {
            gold,
            pred,
            schema,
            format,
            std,
            out,
        } => {
            let schema = schema.as_deref().map(load_schema).transpose()?;
            let std = match std {
                StdArg::Sample => StdKind::Sample,
                StdArg::Population => StdKind::Population,
            };
            let report = score_files(&gold, &pred, schema.as_ref(), std)?;
            let bytes = emit_report(&report, report_format(format));
            match out {
                Some(path) => std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e)),
                None => print(&bytes),
            }
        }
        Command::Pipeline(args) => run_pipeline(&args.context()?).map(drop),
    }
}
