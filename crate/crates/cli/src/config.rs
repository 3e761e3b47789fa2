//! Settings resolution: command-line flags (and their environment
//! variables) over the config file over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use difforacle::baseline::ClaimRules;
use difforacle::generator::GenerationConfig;
use difforacle::llm::{PromptBook, DEFAULT_MODEL};
use difforacle::testgen::TestGenConfig;
use serde::Deserialize;

pub const DEFAULT_CONFIG_FILE: &str = "difforacle.toml";

/// Contents of `difforacle.toml`. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub temperature_intent: Option<f64>,
    pub temperature_gen: Option<f64>,
    pub n_versions: Option<usize>,
    pub max_regen_rounds: Option<u32>,
    pub shared_conversation: Option<bool>,
    pub k: Option<usize>,
    pub saturation_window: Option<usize>,
    pub inputs_per_prompt: Option<usize>,
    pub strict_attempts: Option<bool>,
    pub timeout_ms: Option<u64>,
    pub workers: Option<usize>,
    pub runs: Option<usize>,
    pub templates: Option<PathBuf>,
    pub python: Option<String>,
    pub base_url: Option<String>,
    pub claim_rules: Option<ClaimRules>,
}

impl FileConfig {
    /// Reads `path`, or `difforacle.toml` in the working directory when no
    /// path is given and that file exists.
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None if Path::new(DEFAULT_CONFIG_FILE).exists() => PathBuf::from(DEFAULT_CONFIG_FILE),
            None => return Ok(FileConfig::default()),
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // relative template directories are relative to the config file
        Ok(FileConfig { templates: cfg.templates.map(|t| path.parent().unwrap_or(Path::new(".")).join(t)), ..cfg })
    }
}

/// Flag values; `None` when neither the flag nor its variable was given.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub temperature_intent: Option<f64>,
    pub temperature_gen: Option<f64>,
    pub n_versions: Option<usize>,
    pub k: Option<usize>,
    pub timeout_ms: Option<u64>,
    pub workers: Option<usize>,
    pub runs: Option<usize>,
    pub templates: Option<PathBuf>,
    pub python: Option<String>,
    pub base_url: Option<String>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub prompts: PromptBook,
    pub generation: GenerationConfig,
    pub testgen: TestGenConfig,
    pub claim_rules: ClaimRules,
    pub workers: usize,
    pub runs: usize,
    pub python: Option<String>,
    pub base_url: Option<String>,
}

impl Settings {
    pub fn resolve(flags: Overrides, file: FileConfig) -> Result<Settings> {
        let mut prompts = PromptBook::default();
        if let Some(dir) = flags.templates.or(file.templates) {
            if !dir.is_dir() {
                bail!("template directory {} does not exist", dir.display());
            }
            prompts = prompts.with_overrides(&dir)?;
        }
        prompts.model = flags.model.or(file.model).unwrap_or_else(|| DEFAULT_MODEL.to_string());
        prompts.temperature_intent =
            flags.temperature_intent.or(file.temperature_intent).unwrap_or(prompts.temperature_intent);
        prompts.temperature_gen = flags.temperature_gen.or(file.temperature_gen).unwrap_or(prompts.temperature_gen);
        for (name, t) in
            [("temperature-intent", prompts.temperature_intent), ("temperature-gen", prompts.temperature_gen)]
        {
            if !(0.0..=2.0).contains(&t) {
                bail!("--{name} must be within [0, 2], got {t}");
            }
        }

        let gen_default = GenerationConfig::default();
        let generation = GenerationConfig {
            n_versions: flags.n_versions.or(file.n_versions).unwrap_or(gen_default.n_versions),
            max_regen_rounds: file.max_regen_rounds.unwrap_or(gen_default.max_regen_rounds),
            shared_conversation: file.shared_conversation.unwrap_or(gen_default.shared_conversation),
        };
        generation.validate()?;

        let tg_default = TestGenConfig::default();
        let testgen = TestGenConfig {
            k_attempts: flags.k.or(file.k).unwrap_or(tg_default.k_attempts),
            saturation_window: file.saturation_window.unwrap_or(tg_default.saturation_window),
            inputs_per_prompt: file.inputs_per_prompt.unwrap_or(tg_default.inputs_per_prompt),
            timeout_ms: flags.timeout_ms.or(file.timeout_ms).unwrap_or(tg_default.timeout_ms),
            strict_attempts: file.strict_attempts.unwrap_or(tg_default.strict_attempts),
        };
        testgen.validate()?;

        let workers = flags.workers.or(file.workers).unwrap_or(1);
        let runs = flags.runs.or(file.runs).unwrap_or(10);
        if workers == 0 || runs == 0 {
            bail!("--workers and --runs must be at least 1");
        }
        Ok(Settings {
            prompts,
            generation,
            testgen,
            claim_rules: file.claim_rules.unwrap_or_default(),
            workers,
            runs,
            python: flags.python.or(file.python),
            base_url: flags.base_url.or(file.base_url),
        })
    }
}
