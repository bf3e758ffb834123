//! Scene graph + program to target predictions, the path shared by the
//! evaluation harness, training and the command line.

use thiserror::Error;

use crate::datasets::DeicticInstance;
use crate::grounding::{compile, GroundingConfig, GroundingError, ReasoningGraph};
use crate::logic::{scene_graph_to_facts, Program, SceneError, SceneGraph};
use crate::reasoner::{extract_targets, forward, ReasonError, ReasonerConfig, TargetPrediction};
use crate::rulegen::{template_rulegen, RulegenError};
use crate::valuation::ValuationVector;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Reason(#[from] ReasonError),
    #[error(transparent)]
    Rulegen(#[from] RulegenError),
    #[error("instance {index}: {source}")]
    Instance {
        index: usize,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    pub fn at(index: usize) -> impl FnOnce(PipelineError) -> PipelineError {
        move |e| PipelineError::Instance {
            index,
            source: Box::new(e),
        }
    }
}

/// Everything produced by one reasoning run.
#[derive(Debug, Clone)]
pub struct Reasoned {
    pub graph: ReasoningGraph,
    pub valuation: ValuationVector<f64>,
    pub predictions: Vec<TargetPrediction>,
}

/// Grounds `program` on the facts of `sg`, runs inference and reads off targets.
pub fn reason_scene(program: &Program, sg: &SceneGraph, grounding: &GroundingConfig, cfg: &ReasonerConfig) -> Result<Reasoned, PipelineError> {
    let (facts, v0) = scene_graph_to_facts::<f64>(sg)?;
    let graph = compile(program, &facts, grounding)?;
    let valuation = forward(&graph, &v0, &program.weights(), cfg)?;
    let predictions = extract_targets(&graph, &valuation, sg, cfg)?;
    Ok(Reasoned {
        graph,
        valuation,
        predictions,
    })
}

/// Template rules from the instance's structured form, solved on `sg`.
pub fn template_predictions(inst: &DeicticInstance, sg: &SceneGraph, cfg: &ReasonerConfig) -> Result<Vec<TargetPrediction>, PipelineError> {
    let program = template_rulegen(&inst.structured)?;
    Ok(reason_scene(&program, sg, &GroundingConfig::default(), cfg)?.predictions)
}
