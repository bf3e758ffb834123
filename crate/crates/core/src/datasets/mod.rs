//! Deictic datasets: instance type, JSON I/O and the synthesizers.

mod clevr;
mod deivg;
mod phrases;
mod synthetic;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic::{SceneGraph, SceneObject};

pub use clevr::{
    clevr_facts, clevr_program, clevr_scene_graph, generate_deiclevr, load_deiclevr, list_op_oracle, save_deiclevr,
    deiclevr_predictions, solve_deiclevr, ClevrObject, ClevrScene, DeiClevrInstance, ListOperation, OperationKind, CLEVR_COLORS, CLEVR_MATERIALS,
    CLEVR_SHAPES, DEICLEVR_STEPS,
};
pub use deivg::{synthesize_deivg, DeivgConfig, DeivgSynthesis};
pub use phrases::{normalize_relation, parse_prompt, relation_phrase, render_prompt, PromptStyle, RELATION_WHITELIST};
pub use synthetic::{corrupt_scene, synthetic_scenes, SyntheticSceneConfig};

/// One deictic prompt with its answer objects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeicticInstance {
    pub deictic_prompt: String,
    #[serde(rename = "answer")]
    pub answers: Vec<SceneObject>,
    #[serde(rename = "VG_image_id")]
    pub image_id: u64,
    #[serde(rename = "VG_data_index", skip_serializing_if = "Option::is_none")]
    pub data_index: Option<u64>,
    /// (relation phrase, object name) per condition, in prompt order.
    pub structured: Vec<(String, String)>,
    pub complexity: usize,
}

#[derive(Deserialize)]
struct RawInstance {
    deictic_prompt: String,
    answer: Vec<SceneObject>,
    #[serde(alias = "image_id")]
    #[serde(rename = "VG_image_id")]
    image_id: u64,
    #[serde(rename = "VG_data_index", default)]
    data_index: Option<u64>,
    #[serde(default)]
    structured: Option<Vec<(String, String)>>,
    #[serde(default)]
    complexity: Option<usize>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("only {available} candidate prompts with {k} relation(s), {requested} requested")]
    InsufficientCandidates { k: usize, requested: usize, available: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses a DeiVG JSON array. Answer objects may carry `names` or a single `name`.
/// When `structured` is absent it is recovered from the prompt text; prompts in
/// another phrasing load with an empty structured form.
pub fn parse_deivg(text: &str) -> Result<Vec<DeicticInstance>, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: Vec<RawInstance> = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    raw.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r.answer.is_empty() {
                return Err(schema(format!("[{i}].answer"), "answer list is empty"));
            }
            let structured = match r.structured {
                Some(s) => s,
                None => parse_prompt(&r.deictic_prompt).unwrap_or_else(|| {
                    log::warn!("record {i}: prompt {:?} does not follow the template", r.deictic_prompt);
                    Vec::new()
                }),
            };
            if let Some(c) = r.complexity {
                if c != structured.len() {
                    return Err(schema(
                        format!("[{i}].complexity"),
                        format!("complexity {c} but {} structured conditions", structured.len()),
                    ));
                }
            }
            Ok(DeicticInstance {
                deictic_prompt: r.deictic_prompt,
                answers: r.answer,
                image_id: r.image_id,
                data_index: r.data_index,
                complexity: structured.len(),
                structured,
            })
        })
        .collect()
}

pub fn load_deivg(path: &Path) -> Result<Vec<DeicticInstance>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_deivg(&text)
}

pub fn deivg_to_json(instances: &[DeicticInstance]) -> String {
    let mut s = serde_json::to_string_pretty(instances).expect("instances serialize");
    s.push('\n');
    s
}

pub fn save_deivg(instances: &[DeicticInstance], path: &Path) -> Result<(), DatasetError> {
    fs::write(path, deivg_to_json(instances)).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads scene graphs from a JSON array, or a single scene graph object.
pub fn parse_scene_graphs(text: &str) -> Result<Vec<SceneGraph>, DatasetError> {
    let trimmed = text.trim_start();
    let de = &mut serde_json::Deserializer::from_str(text);
    let map = |e: serde_path_to_error::Error<serde_json::Error>| schema(e.path().to_string(), e.into_inner().to_string());
    if trimmed.starts_with('[') {
        serde_path_to_error::deserialize::<_, Vec<SceneGraph>>(de).map_err(map)
    } else {
        Ok(vec![serde_path_to_error::deserialize::<_, SceneGraph>(de).map_err(map)?])
    }
}

pub fn load_scene_graphs(path: &Path) -> Result<Vec<SceneGraph>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scene_graphs(&text)
}

pub fn save_scene_graphs(scenes: &[SceneGraph], path: &Path) -> Result<(), DatasetError> {
    let mut s = serde_json::to_string_pretty(scenes).expect("scene graphs serialize");
    s.push('\n');
    fs::write(path, s).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}
