use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ReasonError, ReasonerConfig};
use crate::grounding::ReasoningGraph;
use crate::logic::{BBox, SceneGraph, TARGET_PREDICATE};
use crate::scalar::Scalar;
use crate::valuation::ValuationVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPrediction<T = f64> {
    pub object_constant: String,
    pub object_id: u64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: T,
    pub fallback: bool,
    /// Node holding the score, absent for fallback predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_id: Option<usize>,
}

/// Reads `target(objK)` scores off a final valuation.
///
/// Predictions scoring above the threshold are returned best first. When
/// none qualifies a single random object is returned with a random score
/// drawn from the fallback range. Scenes without objects yield nothing.
pub fn extract_targets<T: Scalar>(
    graph: &ReasoningGraph,
    v: &ValuationVector<T>,
    sg: &SceneGraph,
    cfg: &ReasonerConfig,
) -> Result<Vec<TargetPrediction<T>>, ReasonError> {
    if !graph.defines(TARGET_PREDICATE) {
        return Err(ReasonError::NoTargetAtoms);
    }
    if v.len() != graph.atom_count() {
        return Err(ReasonError::DimensionMismatch {
            what: "final valuation",
            expected: graph.atom_count(),
            found: v.len(),
        });
    }
    let map = sg.object_map();
    let threshold = T::of(cfg.target_threshold);
    let mut out = Vec::new();
    for (id, atom) in graph.atoms().iter().enumerate() {
        if atom.name() != TARGET_PREDICATE || atom.args.len() != 1 || v[id] <= threshold {
            continue;
        }
        let constant = atom.args[0].name();
        let Some(idx) = map.index_of_constant(constant) else {
            continue;
        };
        let obj = &sg.objects[idx];
        out.push(TargetPrediction {
            object_constant: constant.to_string(),
            object_id: obj.object_id,
            bbox: obj.bbox,
            score: v[id],
            fallback: false,
            atom_id: Some(id),
        });
    }
    // stable sort keeps atom order among equal scores
    out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    if out.is_empty() && !sg.objects.is_empty() {
        out.push(fallback_prediction(sg, cfg));
    }
    Ok(out)
}

fn fallback_prediction<T: Scalar>(sg: &SceneGraph, cfg: &ReasonerConfig) -> TargetPrediction<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let idx = rng.gen_range(0..sg.objects.len());
    let [lo, hi] = cfg.fallback_score_range;
    let score = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let obj = &sg.objects[idx];
    TargetPrediction {
        object_constant: crate::logic::object_constant(idx),
        object_id: obj.object_id,
        bbox: obj.bbox,
        score: T::of(score),
        fallback: true,
        atom_id: None,
    }
}
