//! Scene graphs and their translation into facts.
//!
//! The JSON layout follows Visual Genome exports: objects carry
//! `object_id`, `names` (or a single `name`), `synsets` and a pixel box
//! `x, y, w, h`; relations carry `subject_id`, `predicate`, `object_id`
//! and optionally a confidence `score`. Unknown keys are ignored.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{is_constant_name, Atom, FactSet, TYPE_PREDICATE};
use crate::scalar::Scalar;
use crate::valuation::ValuationVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        iw.max(0.0) * ih.max(0.0)
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x >= 0.0 && self.y >= 0.0 && self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawObject")]
pub struct SceneObject {
    pub object_id: u64,
    pub names: Vec<String>,
    pub synsets: Vec<String>,
    #[serde(flatten)]
    pub bbox: BBox,
}

impl SceneObject {
    pub fn primary_name(&self) -> Option<&str> {
        self.names.first().map(String::as_str)
    }
}

#[derive(Deserialize)]
struct RawObject {
    object_id: u64,
    #[serde(default)]
    names: Vec<String>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    synsets: Vec<String>,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl From<RawObject> for SceneObject {
    fn from(raw: RawObject) -> Self {
        let mut names = raw.names;
        if let Some(n) = raw.name {
            if !names.contains(&n) {
                names.insert(0, n);
            }
        }
        Self {
            object_id: raw.object_id,
            names,
            synsets: raw.synsets,
            bbox: BBox::new(raw.x, raw.y, raw.w, raw.h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub subject_id: u64,
    pub predicate: String,
    pub object_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl Relation {
    pub fn new(subject_id: u64, predicate: impl Into<String>, object_id: u64) -> Self {
        Self {
            subject_id,
            predicate: predicate.into(),
            object_id,
            score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    #[serde(alias = "VG_image_id")]
    pub image_id: u64,
    pub objects: Vec<SceneObject>,
    #[serde(default, alias = "relationships")]
    pub relations: Vec<Relation>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("scene {image_id}: duplicate object id {object_id}")]
    DuplicateObject { image_id: u64, object_id: u64 },
    #[error("scene {image_id}: object {object_id} has an invalid box {bbox:?}")]
    InvalidBox { image_id: u64, object_id: u64, bbox: BBox },
    #[error("scene {image_id}: object {object_id} has no usable name")]
    UnnamedObject { image_id: u64, object_id: u64 },
    #[error("scene {image_id}: relation `{predicate}` references missing object {missing}")]
    DanglingReference { image_id: u64, predicate: String, missing: u64 },
    #[error("scene {image_id}: relation predicate `{predicate}` cannot be expressed as a symbol")]
    InvalidPredicate { image_id: u64, predicate: String },
    #[error("scene {image_id}: relation score {score} outside [0, 1]")]
    InvalidScore { image_id: u64, score: f64 },
}

fn keep_symbol_char(c: char) -> bool {
    !matches!(c, '(' | ')' | ',' | ':' | '-' | '.') && !c.is_control()
}

fn strip_leading(s: String) -> Option<String> {
    let trimmed = s.trim_start_matches(|c: char| !(c.is_lowercase() || c.is_ascii_digit()));
    (!trimmed.is_empty()).then(|| trimmed.to_string())
}

/// Object-name constant: lowercased with whitespace and reserved punctuation removed
/// (`"white line"` becomes `whiteline`). Returns `None` when nothing usable is left.
pub fn canonical_name(name: &str) -> Option<String> {
    let s: String = name
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_whitespace() && keep_symbol_char(*c))
        .collect();
    strip_leading(s).filter(|s| is_constant_name(s))
}

/// Relation predicate: lowercased, whitespace runs become `_` (`"parked on"` becomes `parked_on`).
pub fn canonical_predicate(phrase: &str) -> Option<String> {
    let lowered = phrase.to_lowercase();
    let words: Vec<String> = lowered
        .split_whitespace()
        .map(|w| w.chars().filter(|c| keep_symbol_char(*c)).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect();
    strip_leading(words.join("_")).filter(|s| is_constant_name(s))
}

/// Constant naming the object at position `index` of a scene (`obj1`, `obj2`, ...).
pub fn object_constant(index: usize) -> String {
    format!("obj{}", index + 1)
}

/// Maps object constants back to scene objects.
#[derive(Debug, Clone)]
pub struct ObjectMap {
    by_constant: HashMap<String, usize>,
    by_id: HashMap<u64, usize>,
}

impl ObjectMap {
    pub fn new(sg: &SceneGraph) -> Self {
        Self {
            by_constant: (0..sg.objects.len()).map(|i| (object_constant(i), i)).collect(),
            by_id: sg.objects.iter().enumerate().map(|(i, o)| (o.object_id, i)).collect(),
        }
    }

    pub fn index_of_constant(&self, constant: &str) -> Option<usize> {
        self.by_constant.get(constant).copied()
    }

    pub fn constant_of_id(&self, object_id: u64) -> Option<String> {
        self.by_id.get(&object_id).map(|&i| object_constant(i))
    }

    pub fn index_of_id(&self, object_id: u64) -> Option<usize> {
        self.by_id.get(&object_id).copied()
    }
}

impl SceneGraph {
    pub fn validate(&self) -> Result<(), SceneError> {
        let image_id = self.image_id;
        let mut ids = HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.object_id) {
                return Err(SceneError::DuplicateObject {
                    image_id,
                    object_id: o.object_id,
                });
            }
            if !o.bbox.is_valid() {
                return Err(SceneError::InvalidBox {
                    image_id,
                    object_id: o.object_id,
                    bbox: o.bbox,
                });
            }
            if o.names.iter().filter_map(|n| canonical_name(n)).next().is_none() {
                return Err(SceneError::UnnamedObject {
                    image_id,
                    object_id: o.object_id,
                });
            }
        }
        for r in &self.relations {
            for end in [r.subject_id, r.object_id] {
                if !ids.contains(&end) {
                    return Err(SceneError::DanglingReference {
                        image_id,
                        predicate: r.predicate.clone(),
                        missing: end,
                    });
                }
            }
            if canonical_predicate(&r.predicate).is_none() {
                return Err(SceneError::InvalidPredicate {
                    image_id,
                    predicate: r.predicate.clone(),
                });
            }
            if let Some(score) = r.score {
                if !(0.0..=1.0).contains(&score) {
                    return Err(SceneError::InvalidScore { image_id, score });
                }
            }
        }
        Ok(())
    }

    pub fn object_map(&self) -> ObjectMap {
        ObjectMap::new(self)
    }

    /// Canonical relation predicates present in the scene.
    pub fn relation_vocabulary(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .relations
            .iter()
            .filter_map(|r| canonical_predicate(&r.predicate))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

/// Translates a scene graph into facts: `pred(objS,objO)` for every relation,
/// then `type(objK,name)` for every object name. Values are the relation
/// scores when present and 1.0 otherwise.
pub fn scene_graph_to_facts<T: Scalar>(sg: &SceneGraph) -> Result<(FactSet, ValuationVector<T>), SceneError> {
    sg.validate()?;
    let map = sg.object_map();
    let mut facts = FactSet::new();
    let mut values: Vec<T> = Vec::new();
    for i in 0..sg.objects.len() {
        facts.add_entity(object_constant(i));
    }
    let mut push = |facts: &mut FactSet, atom: Atom, v: T| {
        let (i, new) = facts.insert(atom);
        if new {
            values.push(v);
        } else if v > values[i] {
            values[i] = v;
        }
    };
    for r in &sg.relations {
        // validated above
        let pred = canonical_predicate(&r.predicate).expect("validated predicate");
        let s = map.constant_of_id(r.subject_id).expect("validated subject");
        let o = map.constant_of_id(r.object_id).expect("validated object");
        let v = T::of(r.score.unwrap_or(1.0));
        push(&mut facts, Atom::fact(&pred, &[s, o]), v);
    }
    for (i, o) in sg.objects.iter().enumerate() {
        for name in o.names.iter().filter_map(|n| canonical_name(n)) {
            push(&mut facts, Atom::fact(TYPE_PREDICATE, &[object_constant(i), name]), T::one());
        }
    }
    Ok((facts, ValuationVector::from_clamped(values)))
}
