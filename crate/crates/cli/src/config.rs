//! TOML configuration. Every section is optional; command-line flags win.

use std::fs;
use std::path::Path;

use deixis::datasets::SyntheticSceneConfig;
use deixis::eval::EvalConfig;
use deixis::reasoner::ReasonerConfig;
use deixis::rulegen::RulegenConfig;
use deixis::training::TrainConfig;
use deixis::unifier::{EmbeddingServiceConfig, UnifierConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub offline: bool,
    pub jobs: usize,
    pub reasoner: ReasonerConfig,
    pub rulegen: RulegenConfig,
    pub unifier: UnifierConfig,
    pub embedding_service: Option<EmbeddingServiceConfig>,
    pub eval: EvalConfig,
    pub train: TrainConfig,
    pub scenes: SyntheticSceneConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            offline: false,
            jobs: 1,
            reasoner: ReasonerConfig::default(),
            rulegen: RulegenConfig::default(),
            unifier: UnifierConfig::default(),
            embedding_service: None,
            eval: EvalConfig::default(),
            train: TrainConfig::default(),
            scenes: SyntheticSceneConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}
