//! Versioned experiment config. Every section is optional; command-line
//! flags override values loaded here.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use selfreason::datagen::QcThresholds;
use selfreason::gateway::HttpConfig;
use selfreason::robustness::Setting;
use selfreason::training::ScheduleConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub http: Option<HttpConfig>,
    #[serde(default)]
    pub datagen: DatagenSection,
    #[serde(default)]
    pub qc: Option<QcThresholds>,
    #[serde(default)]
    pub judge: JudgeSection,
    #[serde(default)]
    pub robustness: RobustnessSection,
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub record_timing: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenSection {
    pub negatives_per_question: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeSection {
    pub theta_full: Option<f64>,
    pub theta_partial: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSection {
    pub settings: Option<Vec<Setting>>,
    pub seeds: Option<Vec<u64>>,
    pub fraction: Option<f64>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else {
            return Ok(Config { version: CONFIG_VERSION, ..Config::default() });
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.version != CONFIG_VERSION {
            bail!("config {} has version {}, expected {CONFIG_VERSION}", path.display(), cfg.version);
        }
        Ok(cfg)
    }
}
