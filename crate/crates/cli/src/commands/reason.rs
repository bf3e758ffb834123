use std::collections::HashMap;
use std::path::PathBuf;

use clap::Args;
use deixis::datasets::{load_deivg, load_scene_graphs, render_prompt, PromptStyle};
use deixis::logic::SceneGraph;
use serde::Serialize;

use super::{build_solver, emit, par_map, parse_structured, to_json, CommonArgs, ReasonerArgs, RuleArgs, RulegenMode};
use crate::error::CliError;
use crate::manifest::{manifest_path, Manifest};
use crate::solve::{Solved, Solver};

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReasonArgs {
    /// Scene graphs (JSON array or single object).
    #[arg(long)]
    pub scene_graphs: PathBuf,
    /// Only reason over these images.
    #[arg(long = "image-id")]
    pub image_ids: Vec<u64>,
    /// Deictic prompt applied to every selected scene.
    #[arg(long)]
    pub prompt: Option<String>,
    /// DeiVG dataset: solve each instance on its own scene.
    #[arg(long, conflicts_with = "prompt")]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub rules: RuleArgs,
    #[command(flatten)]
    pub reasoner: ReasonerArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Job<'a> {
    id: Option<String>,
    prompt: String,
    structured: Vec<(String, String)>,
    scene: &'a SceneGraph,
}

pub fn reason(args: ReasonArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load()?;
    args.reasoner.apply(&mut cfg);
    cfg.reasoner.validate()?;
    let scenes = load_scene_graphs(&args.scene_graphs)?;
    let cli_structured = match &args.rules.structured {
        Some(s) => parse_structured(s)?,
        None => Vec::new(),
    };

    let jobs: Vec<Job> = if let Some(path) = &args.dataset {
        let by_id: HashMap<u64, &SceneGraph> = scenes.iter().map(|s| (s.image_id, s)).collect();
        load_deivg(path)?
            .into_iter()
            .enumerate()
            .filter(|(_, inst)| args.image_ids.is_empty() || args.image_ids.contains(&inst.image_id))
            .map(|(i, inst)| {
                let scene = by_id
                    .get(&inst.image_id)
                    .ok_or_else(|| CliError::input(format!("instance {i}: no scene graph for image {}", inst.image_id)))?;
                Ok(Job {
                    id: Some(i.to_string()),
                    prompt: inst.deictic_prompt,
                    structured: inst.structured,
                    scene,
                })
            })
            .collect::<Result<_, CliError>>()?
    } else {
        let prompt = match (&args.prompt, cli_structured.is_empty()) {
            (Some(p), _) => p.clone(),
            (None, false) => render_prompt(&cli_structured, PromptStyle::Comma),
            (None, true) if args.rules.program.is_some() => String::new(),
            (None, true) => return Err(CliError::input("one of --prompt, --structured, --program or --dataset is required")),
        };
        let selected: Vec<&SceneGraph> = scenes
            .iter()
            .filter(|s| args.image_ids.is_empty() || args.image_ids.contains(&s.image_id))
            .collect();
        if selected.is_empty() {
            return Err(CliError::input("no scene graph matches the requested image ids"));
        }
        selected
            .into_iter()
            .map(|scene| Job {
                id: None,
                prompt: prompt.clone(),
                structured: cli_structured.clone(),
                scene,
            })
            .collect()
    };

    let solver: Solver = build_solver(&args.rules, RulegenMode::Chat, &cfg)?;
    let results: Vec<Solved> = par_map(cfg.jobs, &jobs, |i, job| {
        let structured = if cli_structured.is_empty() { &job.structured } else { &cli_structured };
        let mut solved = solver
            .solve(&job.prompt, structured, job.scene)
            .map_err(|e| e.context(format!("{} (image {})", job.id.as_deref().map_or_else(|| format!("scene {i}"), |id| format!("instance {id}")), job.scene.image_id)))?;
        solved.id = job.id.clone();
        Ok(solved)
    })?;

    let text = to_json(&results);
    emit(args.out.as_deref(), &text)?;
    if let Some(out) = &args.out {
        Manifest::new("reason", Some(cfg.reasoner.rng_seed), &args, &cfg, &[out.as_path()]).write(&manifest_path(out))?;
    }
    Ok(())
}
