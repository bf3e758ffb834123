//! Prompt + scene graph to scored targets, shared by `reason` and `eval`.

use std::collections::BTreeSet;

use deixis::datasets::parse_prompt;
use deixis::grounding::{GroundingConfig, ReasoningGraph};
use deixis::logic::{scene_graph_to_facts, BBox, Program, SceneGraph};
use deixis::pipeline::reason_scene;
use deixis::reasoner::{ReasonerConfig, TargetPrediction};
use deixis::rulegen::{generate_rules, template_rulegen, ChatBackend, RulegenConfig};
use deixis::unifier::{unify_program, EmbeddingProvider, SceneVocabulary, UnificationReport, UnifierConfig};
use deixis::{Embeddings, Valuation};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub enum RuleSource {
    /// A fixed program for every scene.
    Program(Program),
    /// Template rules from each instance's structured form, or from parsing the prompt.
    Template,
    /// A chat model, live or replayed from fixtures.
    Chat(Box<dyn ChatBackend>),
}

pub struct Solver {
    pub rules: RuleSource,
    pub store: Option<Embeddings>,
    pub provider: Option<Box<dyn EmbeddingProvider + Send + Sync>>,
    pub unifier: UnifierConfig,
    pub rulegen: RulegenConfig,
    pub reasoner: ReasonerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOut {
    #[serde(flatten)]
    pub prediction: TargetPrediction,
    /// Ground rules deriving the target whose bodies hold in the final valuation.
    #[serde(default)]
    pub fired: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solved {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub image_id: u64,
    pub program: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unification: Option<UnificationReport>,
    pub predictions: Vec<PredictionOut>,
}

impl Solved {
    pub fn boxes(&self) -> Vec<(BBox, f64)> {
        self.predictions.iter().map(|p| (p.prediction.bbox, p.prediction.score)).collect()
    }
}

fn fired(graph: &ReasoningGraph, v: &Valuation, atom: usize, threshold: f64) -> Vec<String> {
    graph
        .incoming(atom)
        .iter()
        .filter(|&&k| graph.conj_nodes()[k].body.iter().map(|&b| v[b]).product::<f64>() > threshold)
        .map(|&k| graph.describe_conj(k))
        .collect()
}

fn program_terms(p: &Program) -> Vec<String> {
    let mut out = BTreeSet::new();
    for r in p.rules() {
        for a in std::iter::once(&r.head).chain(&r.body) {
            out.insert(a.name().to_string());
            for t in &a.args {
                if !t.is_var() {
                    out.insert(t.name().to_string());
                }
            }
        }
    }
    out.into_iter().collect()
}

impl Solver {
    fn program(&self, prompt: &str, structured: &[(String, String)], sg: &SceneGraph) -> Result<Program, CliError> {
        match &self.rules {
            RuleSource::Program(p) => Ok(p.clone()),
            RuleSource::Template => {
                let pairs = if structured.is_empty() {
                    parse_prompt(prompt).ok_or_else(|| {
                        CliError::input(format!("prompt {prompt:?} does not follow the template; pass --structured or use a chat model"))
                    })?
                } else {
                    structured.to_vec()
                };
                Ok(template_rulegen(&pairs)?)
            }
            RuleSource::Chat(backend) => Ok(generate_rules(prompt, &sg.relation_vocabulary(), backend.as_ref(), &self.rulegen)?),
        }
    }

    pub fn solve(&self, prompt: &str, structured: &[(String, String)], sg: &SceneGraph) -> Result<Solved, CliError> {
        let mut program = self.program(prompt, structured, sg)?;
        let mut unification = None;
        if self.store.is_some() || self.provider.is_some() {
            let (facts, _) = scene_graph_to_facts::<f64>(sg)?;
            let mut store = self.store.clone().unwrap_or_else(|| Embeddings::new(0));
            if let Some(provider) = &self.provider {
                let vocab = SceneVocabulary::of(&facts);
                let mut terms = program_terms(&program);
                terms.extend(vocab.predicates.keys().cloned());
                terms.extend(vocab.attributes.iter().cloned());
                store.fill_from(provider.as_ref(), &terms)?;
            }
            let (unified, report) = unify_program(&program, &facts, &store, &self.unifier);
            program = unified;
            unification = Some(report);
        }
        let r = reason_scene(&program, sg, &GroundingConfig::default(), &self.reasoner)?;
        let threshold = self.reasoner.target_threshold;
        let predictions = r
            .predictions
            .into_iter()
            .map(|p| PredictionOut {
                fired: p.atom_id.map(|a| fired(&r.graph, &r.valuation, a, threshold)).unwrap_or_default(),
                prediction: p,
            })
            .collect();
        Ok(Solved {
            id: None,
            image_id: sg.image_id,
            program: program.to_string(),
            unification,
            predictions,
        })
    }
}
