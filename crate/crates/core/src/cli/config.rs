//! Pipeline configuration file.
//!
//! TOML with `${VAR}` interpolation from the environment, applied to the raw
//! text before parsing. Relative paths resolve against the directory of the
//! config file.

use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::entity_aug::EntityAugConfig;
use crate::instance_aug::InstanceAugConfig;
use crate::llm::LlmConfig;
use crate::prompt::PromptTemplates;
use crate::selection::{SelectionConfig, SelectionMode};

use super::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// Tagger output on `test`; when set, the pipeline ends with a score step.
    pub predictions: Option<PathBuf>,
    /// Rules for the mock backend; the built-in scenario is used otherwise.
    pub mock_scenario: Option<PathBuf>,
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.train,
            &mut self.dev,
            &mut self.test,
            &mut self.schema,
            &mut self.output_dir,
            &mut self.cache_dir,
            &mut self.predictions,
            &mut self.mock_scenario,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds selection and the mock backend. Overrides `selection.seed`.
    pub seed: u64,
    /// Overrides `selection.mode`.
    pub mode: Option<SelectionMode>,
    pub paths: Paths,
    pub selection: SelectionConfig,
    pub entity_aug: EntityAugConfig,
    pub instance_aug: InstanceAugConfig,
    pub llm: LlmConfig,
    pub prompts: PromptTemplates,
}

/// Replaces every `${NAME}` with the value of environment variable `NAME`.
pub fn interpolate_env(text: &str) -> Result<String, CliError> {
    let re = Regex::new(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex");
    let mut missing = None;
    let out = re.replace_all(text, |caps: &regex::Captures<'_>| {
        std::env::var(&caps[1]).unwrap_or_else(|_| {
            missing.get_or_insert_with(|| caps[1].to_string());
            String::new()
        })
    });
    match missing {
        Some(name) => Err(CliError::Config(format!(
            "environment variable {name} referenced in config is not set"
        ))),
        None => Ok(out.into_owned()),
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let text = interpolate_env(text)?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
        config.paths.resolve(base_dir);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Pushes the global seed and mode into the stage configs and checks
    /// every section.
    pub fn finalize(&mut self) -> Result<(), CliError> {
        self.selection.seed = self.seed;
        if let Some(mode) = self.mode {
            self.selection.mode = mode;
        }
        if let Some(dir) = &self.paths.cache_dir {
            self.llm.cache_dir = Some(dir.clone());
        }
        self.selection
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.entity_aug
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.instance_aug
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.llm
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn require(&self, what: &str, path: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        let p = path
            .clone()
            .ok_or_else(|| CliError::Config(format!("paths.{what} is not set")))?;
        if !p.exists() {
            return Err(CliError::Config(format!(
                "paths.{what}: {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    pub fn output_dir(&self) -> Result<PathBuf, CliError> {
        self.paths
            .output_dir
            .clone()
            .ok_or_else(|| CliError::Config("paths.output_dir is not set (or pass --out)".into()))
    }

    /// Everything that influences outputs except filesystem locations.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut llm = self.llm.clone();
        llm.cache_dir = None;
        serde_json::json!({
            "seed": self.seed,
            "selection": self.selection,
            "entity_aug": self.entity_aug,
            "instance_aug": self.instance_aug,
            "llm": llm,
            "prompts": self.prompts,
        })
    }
}
