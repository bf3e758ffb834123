//! DeiCLEVR: up to three distinctly colored objects in a row, prompts asking for
//! the n-th left-most object after deleting a color or sorting by color.
//!
//! Facts are `leftof(start,obj1)`, `leftof(objI,objJ)` for neighbours,
//! `leftof(objN,end)` and `color(objK,c)`.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::grounding::{compile, GroundingConfig};
use crate::logic::{object_constant, parse_program, Atom, BBox, FactSet, Program, SceneGraph, SceneObject};
use crate::reasoner::{extract_targets, forward, ReasonerConfig, TargetPrediction};
use crate::scalar::Scalar;
use crate::valuation::ValuationVector;

/// Colors in sort order.
pub const CLEVR_COLORS: [&str; 4] = ["cyan", "gray", "red", "yellow"];
pub const CLEVR_SHAPES: [&str; 3] = ["sphere", "cube", "cylinder"];
pub const CLEVR_MATERIALS: [&str; 2] = ["metal", "matte"];
/// Inference steps needed by the list-op programs on three objects.
pub const DEICLEVR_STEPS: usize = 5;

const POSITIONS: [&str; 3] = ["first", "second", "third"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClevrObject {
    pub color: String,
    pub shape: String,
    pub material: String,
    #[serde(flatten)]
    pub bbox: BBox,
}

/// Objects ordered left to right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClevrScene {
    pub objects: Vec<ClevrObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperationKind {
    Delete,
    Sort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "operation", rename_all = "lowercase")]
pub enum ListOperation {
    Delete { color: String },
    Sort,
}

impl ListOperation {
    pub fn kind(&self) -> OperationKind {
        match self {
            ListOperation::Delete { .. } => OperationKind::Delete,
            ListOperation::Sort => OperationKind::Sort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeiClevrInstance {
    #[serde(flatten)]
    pub scene: ClevrScene,
    #[serde(flatten)]
    pub operation: ListOperation,
    /// 0-based position in the resulting list.
    pub position: usize,
    pub prompt: String,
    /// Index of the answer in the original left-to-right order.
    pub answer_index: usize,
    pub program: String,
}

impl DeiClevrInstance {
    pub fn program(&self) -> Program {
        clevr_program(&self.operation, self.position)
    }
}

fn color_rank(c: &str) -> Option<usize> {
    CLEVR_COLORS.iter().position(|k| *k == c)
}

/// Applies the list operation and returns the original index of the object at `position`.
pub fn list_op_oracle(scene: &ClevrScene, op: &ListOperation, position: usize) -> Option<usize> {
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    match op {
        ListOperation::Delete { color } => order.retain(|&i| scene.objects[i].color != *color),
        ListOperation::Sort => order.sort_by_key(|&i| color_rank(&scene.objects[i].color)),
    }
    order.get(position).copied()
}

/// Hand-written program whose `target` is the answer of `op` at `position`.
pub fn clevr_program(op: &ListOperation, position: usize) -> Program {
    let p = position;
    let mut lines = Vec::new();
    match op {
        ListOperation::Delete { color } => {
            for k in CLEVR_COLORS.iter().filter(|k| **k != color) {
                lines.push(format!("keep(X):-color(X,{k})."));
            }
            lines.push(format!("del(X):-color(X,{color})."));
            lines.push("kb0(X):-leftof(start,X).".into());
            // kbN(X): X follows exactly N kept objects
            for n in 0..=p {
                lines.push(format!("kb{n}(X):-leftof(Y,X),kb{n}(Y),del(Y)."));
                if n < p {
                    lines.push(format!("kb{}(X):-leftof(Y,X),kb{n}(Y),keep(Y).", n + 1));
                }
            }
            lines.push(format!("target(X):-kb{p}(X),keep(X)."));
        }
        ListOperation::Sort => {
            for (i, a) in CLEVR_COLORS.iter().enumerate() {
                for (j, b) in CLEVR_COLORS.iter().enumerate() {
                    let head = if i < j { "lower" } else { "notlower" };
                    lines.push(format!("{head}(Y,X):-color(Y,{a}),color(X,{b})."));
                }
            }
            // accN(X,Y): N objects up to and including Y rank below X
            lines.push("acc0(X,Y):-leftof(start,Y),notlower(Y,X).".into());
            if p > 0 {
                lines.push("acc1(X,Y):-leftof(start,Y),lower(Y,X).".into());
            }
            for n in 0..=p {
                lines.push(format!("acc{n}(X,Y):-leftof(Z,Y),acc{n}(X,Z),notlower(Y,X)."));
                if n < p {
                    lines.push(format!("acc{}(X,Y):-leftof(Z,Y),acc{n}(X,Z),lower(Y,X).", n + 1));
                }
            }
            lines.push(format!("target(X):-acc{p}(X,Y),leftof(Y,end)."));
        }
    }
    parse_program(&lines.join("\n")).expect("list-op template parses")
}

/// Chain and color facts, all with value 1. Entities are the object constants.
pub fn clevr_facts<T: Scalar>(scene: &ClevrScene) -> (FactSet, ValuationVector<T>) {
    let mut facts = FactSet::new();
    let n = scene.objects.len();
    for i in 0..n {
        facts.add_entity(object_constant(i));
    }
    let mut chain = vec!["start".to_string()];
    chain.extend((0..n).map(object_constant));
    chain.push("end".into());
    for w in chain.windows(2) {
        facts.insert(Atom::fact("leftof", &[&w[0], &w[1]]));
    }
    for (i, o) in scene.objects.iter().enumerate() {
        facts.insert(Atom::fact("color", &[object_constant(i), o.color.clone()]));
    }
    let v = ValuationVector::from_clamped(vec![T::one(); facts.len()]);
    (facts, v)
}

/// Scene graph view used to map `target` atoms back to boxes. Object ids are 1-based positions.
pub fn clevr_scene_graph(scene: &ClevrScene, image_id: u64) -> SceneGraph {
    SceneGraph {
        image_id,
        objects: scene
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| SceneObject {
                object_id: i as u64 + 1,
                names: vec![format!("{} {} {}", o.color, o.material, o.shape)],
                synsets: vec![format!("{}.n.01", o.shape)],
                bbox: o.bbox,
            })
            .collect(),
        relations: Vec::new(),
    }
}

/// Runs the instance's program through the reasoner and returns all targets,
/// scored, with object ids `i + 1` for the i-th object.
pub fn deiclevr_predictions(inst: &DeiClevrInstance, cfg: &ReasonerConfig) -> Result<Vec<TargetPrediction>, DatasetError> {
    let fail = |e: &dyn std::fmt::Display| DatasetError::InvalidArgument(format!("reasoning failed: {e}"));
    let (facts, v0) = clevr_facts::<f64>(&inst.scene);
    let program = inst.program();
    let graph = compile(&program, &facts, &GroundingConfig::default()).map_err(|e| fail(&e))?;
    let v = forward(&graph, &v0, &program.weights(), cfg).map_err(|e| fail(&e))?;
    let sg = clevr_scene_graph(&inst.scene, 0);
    extract_targets(&graph, &v, &sg, cfg).map_err(|e| fail(&e))
}

/// Index of the best non-fallback target, if any.
pub fn solve_deiclevr(inst: &DeiClevrInstance, cfg: &ReasonerConfig) -> Result<Option<usize>, DatasetError> {
    Ok(deiclevr_predictions(inst, cfg)?
        .iter()
        .find(|p| !p.fallback)
        .map(|p| (p.object_id - 1) as usize))
}

fn prompt(op: &ListOperation, position: usize) -> String {
    let pos = POSITIONS[position];
    match op {
        ListOperation::Delete { color } => format!("The {pos} left-most object after deleting a {color} object?"),
        ListOperation::Sort => format!("The {pos} left-most object after sorting the objects by color?"),
    }
}

fn random_scene(rng: &mut ChaCha8Rng) -> ClevrScene {
    let count = rng.gen_range(1..=3);
    let colors = index::sample(rng, CLEVR_COLORS.len(), count).into_vec();
    let objects = colors
        .into_iter()
        .enumerate()
        .map(|(i, c)| ClevrObject {
            color: CLEVR_COLORS[c].into(),
            shape: CLEVR_SHAPES[rng.gen_range(0..CLEVR_SHAPES.len())].into(),
            material: CLEVR_MATERIALS[rng.gen_range(0..CLEVR_MATERIALS.len())].into(),
            bbox: BBox::new(
                30.0 + 140.0 * i as f64 + rng.gen_range(0..40) as f64,
                rng.gen_range(100..200) as f64,
                rng.gen_range(40..90) as f64,
                rng.gen_range(40..90) as f64,
            ),
        })
        .collect();
    ClevrScene { objects }
}

/// Generates `n` instances; configurations whose answer does not exist are redrawn.
pub fn generate_deiclevr(n: usize, kind: OperationKind, seed: u64) -> Vec<DeiClevrInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let scene = random_scene(&mut rng);
        let position = rng.gen_range(0..POSITIONS.len());
        let op = match kind {
            OperationKind::Delete => {
                let c = &scene.objects[rng.gen_range(0..scene.objects.len())].color;
                ListOperation::Delete { color: c.clone() }
            }
            OperationKind::Sort => ListOperation::Sort,
        };
        let Some(answer_index) = list_op_oracle(&scene, &op, position) else {
            continue;
        };
        out.push(DeiClevrInstance {
            prompt: prompt(&op, position),
            program: clevr_program(&op, position).to_string(),
            scene,
            operation: op,
            position,
            answer_index,
        });
    }
    out
}

fn check_instance(i: usize, inst: &DeiClevrInstance) -> Result<(), DatasetError> {
    let err = |field: &str, message: String| DatasetError::Schema {
        path: format!("[{i}].{field}"),
        message,
    };
    if inst.scene.objects.is_empty() || inst.scene.objects.len() > 3 {
        return Err(err("objects", format!("expected 1 to 3 objects, found {}", inst.scene.objects.len())));
    }
    let mut seen = Vec::new();
    for (j, o) in inst.scene.objects.iter().enumerate() {
        if color_rank(&o.color).is_none() || seen.contains(&&o.color) {
            return Err(err(&format!("objects[{j}].color"), format!("unknown or repeated color `{}`", o.color)));
        }
        seen.push(&o.color);
    }
    if let ListOperation::Delete { color } = &inst.operation {
        if color_rank(color).is_none() {
            return Err(err("color", format!("unknown color `{color}`")));
        }
    }
    if list_op_oracle(&inst.scene, &inst.operation, inst.position) != Some(inst.answer_index) {
        return Err(err("answer_index", "does not match the list operation".into()));
    }
    Ok(())
}

pub fn load_deiclevr(path: &Path) -> Result<Vec<DeiClevrInstance>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let out: Vec<DeiClevrInstance> = serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Schema {
        path: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    for (i, inst) in out.iter().enumerate() {
        check_instance(i, inst)?;
    }
    Ok(out)
}

pub fn save_deiclevr(instances: &[DeiClevrInstance], path: &Path) -> Result<(), DatasetError> {
    let mut s = serde_json::to_string_pretty(instances).expect("instances serialize");
    s.push('\n');
    fs::write(path, s).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(colors: &[&str]) -> ClevrScene {
        ClevrScene {
            objects: colors
                .iter()
                .enumerate()
                .map(|(i, c)| ClevrObject {
                    color: c.to_string(),
                    shape: "cube".into(),
                    material: "metal".into(),
                    bbox: BBox::new(30.0 + 140.0 * i as f64, 100.0, 50.0, 50.0),
                })
                .collect(),
        }
    }

    fn instance(colors: &[&str], op: ListOperation, position: usize) -> DeiClevrInstance {
        let scene = scene(colors);
        DeiClevrInstance {
            answer_index: list_op_oracle(&scene, &op, position).unwrap_or(usize::MAX),
            prompt: prompt(&op, position),
            program: clevr_program(&op, position).to_string(),
            scene,
            operation: op,
            position,
        }
    }

    fn cfg() -> ReasonerConfig {
        ReasonerConfig::default().with_steps(DEICLEVR_STEPS)
    }

    #[test]
    fn oracle_examples() {
        let s = scene(&["gray", "red", "cyan"]);
        assert_eq!(list_op_oracle(&s, &ListOperation::Delete { color: "gray".into() }, 1), Some(2));
        assert_eq!(list_op_oracle(&scene(&["red"]), &ListOperation::Delete { color: "red".into() }, 0), None);
        assert_eq!(list_op_oracle(&scene(&["yellow", "cyan", "red"]), &ListOperation::Sort, 0), Some(1));
    }

    #[test]
    fn reasoner_matches_oracle_exhaustively() {
        let mut checked = 0;
        for a in CLEVR_COLORS {
            for b in CLEVR_COLORS {
                for c in CLEVR_COLORS {
                    let mut cs = vec![a, b, c];
                    cs.dedup();
                    if cs.len() != 3 || a == c {
                        continue;
                    }
                    for k in 1..=3 {
                        let colors = &cs[..k];
                        for position in 0..3 {
                            let mut ops = vec![ListOperation::Sort];
                            ops.extend(colors.iter().map(|c| ListOperation::Delete { color: c.to_string() }));
                            for op in ops {
                                let inst = instance(colors, op, position);
                                let expect = list_op_oracle(&inst.scene, &inst.operation, position);
                                assert_eq!(solve_deiclevr(&inst, &cfg()).unwrap(), expect, "{colors:?} {:?} {position}", inst.operation);
                                checked += 1;
                            }
                        }
                    }
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = generate_deiclevr(50, OperationKind::Delete, 5);
        assert_eq!(a, generate_deiclevr(50, OperationKind::Delete, 5));
        for (i, inst) in a.iter().enumerate() {
            check_instance(i, inst).unwrap();
            assert!(inst.prompt.contains("after deleting a"));
        }
        let s = generate_deiclevr(20, OperationKind::Sort, 5);
        assert!(s.iter().all(|i| i.operation == ListOperation::Sort));
    }

    #[test]
    fn json_shape() {
        let inst = instance(&["gray", "red", "cyan"], ListOperation::Delete { color: "gray".into() }, 1);
        let v = serde_json::to_value(&inst).unwrap();
        assert_eq!(v["operation"], "delete");
        assert_eq!(v["color"], "gray");
        assert_eq!(v["objects"][0]["x"], 30.0);
        assert_eq!(v["answer_index"], 2);
        assert_eq!(v["prompt"], "The second left-most object after deleting a gray object?");
        let back: DeiClevrInstance = serde_json::from_value(v).unwrap();
        assert_eq!(back, inst);
    }
}
