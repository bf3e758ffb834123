use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::Args;
use deixis::datasets::{deiclevr_predictions, load_deiclevr, load_deivg, load_scene_graphs, DEICLEVR_STEPS};
use deixis::eval::{evaluate, overlays, EvalInstance, ScoredBox};
use deixis::logic::SceneGraph;
use serde::{Deserialize, Serialize};

use super::synth::DatasetKind;
use super::{build_solver, emit, par_map, read_text, to_json, CommonArgs, ReasonerArgs, RuleArgs, RulegenMode};
use crate::error::CliError;
use crate::manifest::{manifest_path, write_file, Manifest};

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "deivg")]
    pub kind: DatasetKind,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Scene graphs for running the pipeline on DeiVG instances.
    #[arg(long)]
    pub scene_graphs: Option<PathBuf>,
    /// Precomputed predictions: records with `id` and `predictions` (box, score).
    #[arg(long, conflicts_with = "scene_graphs")]
    pub predictions: Option<PathBuf>,
    /// Minimum IoU (exclusive) for a prediction to match an answer.
    #[arg(long)]
    pub match_iou: Option<f64>,
    #[command(flatten)]
    pub rules: RuleArgs,
    #[command(flatten)]
    pub reasoner: ReasonerArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Report file (JSON); stdout when omitted and no table is requested.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a per-instance table to stdout.
    #[arg(long)]
    pub table: bool,
    /// Write per-instance box overlays to this file.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

#[derive(Deserialize)]
struct PredictionRecord {
    id: String,
    predictions: Vec<ScoredBox>,
}

fn load_predictions(path: &Path) -> Result<HashMap<String, Vec<ScoredBox>>, CliError> {
    let text = read_text(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let records: Vec<PredictionRecord> = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::input(format!("{}: at {}: {}", path.display(), e.path(), e.inner())))?;
    let mut out = HashMap::new();
    for r in records {
        if out.insert(r.id.clone(), r.predictions).is_some() {
            return Err(CliError::input(format!("{}: duplicate id {:?}", path.display(), r.id)));
        }
    }
    Ok(out)
}

fn scored(preds: impl IntoIterator<Item = (deixis::logic::BBox, f64)>) -> Vec<ScoredBox> {
    preds.into_iter().map(|(bbox, score)| ScoredBox { bbox, score }).collect()
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    args.reasoner.apply(&mut cfg);
    if let Some(m) = args.match_iou {
        cfg.eval.match_iou = m;
    }
    cfg.eval.validate()?;
    cfg.reasoner.validate()?;

    let instances: Vec<EvalInstance> = match args.kind {
        DatasetKind::Deiclevr => {
            let data = load_deiclevr(&args.dataset)?;
            // the list programs need more steps than the default to propagate
            if args.reasoner.steps.is_none() {
                cfg.reasoner.steps = cfg.reasoner.steps.max(DEICLEVR_STEPS);
            }
            let given = match &args.predictions {
                Some(p) => Some(load_predictions(p)?),
                None => None,
            };
            par_map(cfg.jobs, &data, |i, inst| {
                let id = i.to_string();
                let predictions = match &given {
                    Some(map) => map.get(&id).cloned().unwrap_or_default(),
                    None => scored(deiclevr_predictions(inst, &cfg.reasoner)?.into_iter().map(|p| (p.bbox, p.score))),
                };
                Ok(EvalInstance {
                    id,
                    predictions,
                    answers: vec![inst.scene.objects[inst.answer_index].bbox],
                })
            })?
        }
        DatasetKind::Deivg => {
            let data = load_deivg(&args.dataset)?;
            if let Some(p) = &args.predictions {
                let map = load_predictions(p)?;
                data.iter()
                    .enumerate()
                    .map(|(i, inst)| EvalInstance {
                        id: i.to_string(),
                        predictions: map.get(&i.to_string()).cloned().unwrap_or_default(),
                        answers: inst.answers.iter().map(|a| a.bbox).collect(),
                    })
                    .collect()
            } else {
                let path = args
                    .scene_graphs
                    .as_ref()
                    .ok_or_else(|| CliError::input("DeiVG evaluation needs --predictions or --scene-graphs"))?;
                let scenes = load_scene_graphs(path)?;
                let by_id: HashMap<u64, &SceneGraph> = scenes.iter().map(|s| (s.image_id, s)).collect();
                let solver = build_solver(&args.rules, RulegenMode::Template, &cfg)?;
                par_map(cfg.jobs, &data, |i, inst| {
                    let sg = by_id
                        .get(&inst.image_id)
                        .ok_or_else(|| CliError::input(format!("instance {i}: no scene graph for image {}", inst.image_id)))?;
                    let solved = solver
                        .solve(&inst.deictic_prompt, &inst.structured, sg)
                        .map_err(|e| e.context(format!("instance {i} (image {})", inst.image_id)))?;
                    Ok(EvalInstance {
                        id: i.to_string(),
                        predictions: scored(solved.boxes()),
                        answers: inst.answers.iter().map(|a| a.bbox).collect(),
                    })
                })?
            }
        }
    };

    let report = evaluate(&instances, &cfg.eval)?;
    let mut outputs: Vec<&Path> = Vec::new();
    if let Some(out) = &args.out {
        write_file(out, &report.to_json())?;
        outputs.push(out);
    }
    if let Some(ov) = &args.overlay {
        write_file(ov, &to_json(&overlays(&instances, &report)))?;
        outputs.push(ov);
    }
    if args.table {
        print!("{}", report.table());
    } else if args.out.is_none() {
        emit(None, &report.to_json())?;
    }
    if let Some(first) = outputs.first() {
        Manifest::new("eval", Some(cfg.reasoner.rng_seed), &args, &cfg, &outputs).write(&manifest_path(first))?;
    }
    Ok(())
}
