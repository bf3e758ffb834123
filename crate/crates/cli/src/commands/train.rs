use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use deixis::datasets::{load_deivg, load_scene_graphs};
use deixis::training::{compile_all, corrupted_mixture, mixture_map, write_trace_csv, Checkpoint, MixtureTask, Trainer};
use serde::Serialize;

use super::{to_json, CommonArgs};
use crate::error::CliError;
use crate::manifest::{write_file, Manifest};

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// DeiVG instances.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Ground-truth scene graphs; a corrupted copy forms the second source.
    #[arg(long)]
    pub scene_graphs: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Fraction of relations dropped in the corrupted source.
    #[arg(long, default_value_t = 0.5)]
    pub corrupt_frac: f64,
    /// Train, validation and test sizes, taken in dataset order.
    #[arg(long, default_value = "1200,400,400")]
    pub split: String,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier run on the same data.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Serialize)]
struct Summary {
    sources: Vec<String>,
    steps: usize,
    theta: Vec<f64>,
    weights: Vec<f64>,
    initial_val_map: Option<f64>,
    final_val_map: Option<f64>,
    initial_test_map: Option<f64>,
    final_test_map: Option<f64>,
}

fn parse_split(s: &str) -> Result<[usize; 3], CliError> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(format!("--split {s:?}: {e}")))?;
    <[usize; 3]>::try_from(parts).map_err(|_| CliError::input(format!("--split {s:?}: expected three sizes")))
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = args.common.load()?;
    let mut tcfg = cfg.train.clone();
    if let Some(v) = args.steps {
        tcfg.steps = v;
    }
    if let Some(v) = args.lr {
        tcfg.lr = v;
    }
    if let Some(v) = args.batch_size {
        tcfg.batch_size = v;
    }
    if let Some(v) = args.seed {
        tcfg.seed = v;
    }
    if let Some(v) = args.eval_every {
        tcfg.eval_every = v;
    }
    tcfg.validate()?;
    if !(0.0..=1.0).contains(&args.corrupt_frac) {
        return Err(CliError::input(format!("--corrupt-frac must lie in [0, 1], got {}", args.corrupt_frac)));
    }

    let [n_train, n_val, n_test] = parse_split(&args.split)?;
    let instances = load_deivg(&args.dataset)?;
    if n_train + n_val + n_test > instances.len() {
        return Err(CliError::input(format!(
            "split {} needs {} instances, dataset has {}",
            args.split,
            n_train + n_val + n_test,
            instances.len()
        )));
    }
    let scenes = load_scene_graphs(&args.scene_graphs)?;
    let data = corrupted_mixture(&instances[..n_train + n_val + n_test], &scenes, args.corrupt_frac, tcfg.seed)?;
    let (train, rest) = data.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    let task = MixtureTask::new(["ground_truth", "corrupted"]);

    let mut trainer = match &args.resume {
        Some(p) => {
            let mut ckpt = Checkpoint::load(p)?;
            if args.steps.is_some() {
                ckpt.config.steps = tcfg.steps;
            }
            Trainer::from_checkpoint(&ckpt, &task, train, val)?
        }
        None => Trainer::new(&task, train, val, &tcfg)?,
    };
    let test_split = compile_all(test, task.sources.len())?;
    let test_map = |theta: &[f64]| -> Result<Option<f64>, CliError> {
        if test_split.is_empty() {
            Ok(None)
        } else {
            Ok(Some(mixture_map(&test_split, theta, &tcfg)?))
        }
    };
    let initial_test = test_map(trainer.theta())?;
    let outcome = trainer.run()?;
    let final_test = test_map(&outcome.theta)?;

    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::input(format!("{}: {e}", args.out_dir.display())))?;
    let ckpt_path = args.out_dir.join("checkpoint.json");
    let trace_path = args.out_dir.join("trace.csv");
    let summary_path = args.out_dir.join("summary.json");
    write_file(&ckpt_path, &outcome.checkpoint.to_json())?;
    let mut csv = Vec::new();
    write_trace_csv(&outcome.trace, &mut csv).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(&trace_path, &String::from_utf8(csv).expect("csv is utf-8"))?;
    let summary = Summary {
        sources: task.sources.clone(),
        steps: outcome.checkpoint.step,
        theta: outcome.theta.clone(),
        weights: outcome.weights.clone(),
        initial_val_map: finite(outcome.initial_val_map),
        final_val_map: finite(outcome.final_val_map),
        initial_test_map: initial_test,
        final_test_map: final_test,
    };
    write_file(&summary_path, &to_json(&summary))?;

    let mut effective = cfg.clone();
    effective.train = outcome.checkpoint.config.clone();
    let outputs: [&Path; 3] = [&ckpt_path, &trace_path, &summary_path];
    Manifest::new("train", Some(effective.train.seed), &args, &effective, &outputs).write(&args.out_dir.join("manifest.json"))?;

    log::info!("weights {:?}, val mAP {:.4} -> {:.4}", outcome.weights, outcome.initial_val_map, outcome.final_val_map);
    Ok(())
}
