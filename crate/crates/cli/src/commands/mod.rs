mod eval;
mod reason;
pub(crate) mod synth;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use deixis::logic::parse_program;
use deixis::rulegen::{ChatBackend, FixtureChatClient, HttpChatClient};
use deixis::unifier::HttpEmbeddingClient;
use deixis::Embeddings;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::solve::{RuleSource, Solver};

pub use eval::{eval, EvalArgs};
pub use reason::{reason, ReasonArgs};
pub use synth::{synth, SynthArgs};
pub use train::{train, TrainArgs};

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Forbid all network access.
    #[arg(long)]
    pub offline: bool,
    /// Worker threads for per-instance work.
    #[arg(long)]
    pub jobs: Option<usize>,
}

impl CommonArgs {
    pub fn load(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = PipelineConfig::load(self.config.as_deref())?;
        if self.offline {
            cfg.offline = true;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RulegenMode {
    /// Rules from the structured form of the prompt.
    Template,
    /// Rules from a chat model (or its recorded fixtures).
    Chat,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RuleArgs {
    /// Rule file used for every scene instead of generating rules.
    #[arg(long)]
    pub program: Option<PathBuf>,
    /// Structured prompt, e.g. "holding:umbrella,on:boat".
    #[arg(long)]
    pub structured: Option<String>,
    #[arg(long, value_enum)]
    pub rulegen: Option<RulegenMode>,
    /// Recorded chat exchanges to replay instead of calling the model.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Word-vector file enabling semantic unification.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Fetch missing vectors from the configured embedding service.
    #[arg(long)]
    pub embedding_service: bool,
    /// Use a chain-of-thought predicate extraction call before rule generation.
    #[arg(long)]
    pub cot: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReasonerArgs {
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Seed of the fallback object choice.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ReasonerArgs {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(g) = self.gamma {
            cfg.reasoner.gamma = g;
        }
        if let Some(s) = self.steps {
            cfg.reasoner.steps = s;
        }
        if let Some(t) = self.threshold {
            cfg.reasoner.target_threshold = t;
        }
        if let Some(s) = self.seed {
            cfg.reasoner.rng_seed = s;
        }
    }
}

/// Parses "rel:attr,rel:attr".
pub fn parse_structured(text: &str) -> Result<Vec<(String, String)>, CliError> {
    text.split([',', ';'])
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (r, a) = pair
                .split_once(':')
                .ok_or_else(|| CliError::input(format!("structured condition `{pair}` is not of the form relation:attribute")))?;
            Ok((r.trim().to_string(), a.trim().to_string()))
        })
        .collect()
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn build_solver(rules: &RuleArgs, default_mode: RulegenMode, cfg: &PipelineConfig) -> Result<Solver, CliError> {
    let mut rulegen = cfg.rulegen.clone();
    if rules.cot {
        rulegen.cot = true;
    }
    let source = if let Some(path) = &rules.program {
        RuleSource::Program(parse_program(&read_text(path)?)?)
    } else if rules.structured.is_some() {
        RuleSource::Template
    } else {
        let mode = rules.rulegen.unwrap_or(if rules.fixtures.is_some() { RulegenMode::Chat } else { default_mode });
        match mode {
            RulegenMode::Template => RuleSource::Template,
            RulegenMode::Chat => {
                let backend: Box<dyn ChatBackend> = match &rules.fixtures {
                    Some(f) => Box::new(FixtureChatClient::load(f)?),
                    None if cfg.offline => {
                        return Err(CliError::input(
                            "offline mode cannot reach the chat model for a natural-language prompt; \
                             pass --structured, --program, --rulegen template or --fixtures, or run online",
                        ))
                    }
                    None => Box::new(HttpChatClient::new(&rulegen)?),
                };
                RuleSource::Chat(backend)
            }
        }
    };
    let store = match &rules.embeddings {
        Some(p) => Some(Embeddings::load(p)?),
        None => None,
    };
    let provider: Option<Box<dyn deixis::unifier::EmbeddingProvider + Send + Sync>> = if rules.embedding_service {
        if cfg.offline {
            return Err(CliError::input("--embedding-service needs network access; use --embeddings with a vector file offline"));
        }
        let service = cfg.embedding_service.clone().unwrap_or_default();
        Some(Box::new(HttpEmbeddingClient::new(service)?))
    } else {
        None
    };
    Ok(Solver {
        rules: source,
        store,
        provider,
        unifier: cfg.unifier.clone(),
        rulegen,
        reasoner: cfg.reasoner.clone(),
    })
}

/// Maps `f` over `items` on `jobs` threads, keeping input order.
pub fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>, CliError>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R, CliError> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

/// Writes to `path`, or stdout when absent.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => crate::manifest::write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_pairs() {
        let p = parse_structured("holding:umbrella, on:boat").unwrap();
        assert_eq!(p, [("holding".to_string(), "umbrella".to_string()), ("on".into(), "boat".into())]);
        assert!(parse_structured("holding umbrella").is_err());
    }
}
