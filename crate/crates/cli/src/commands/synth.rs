use std::path::PathBuf;

use clap::{Args, ValueEnum};
use deixis::datasets::{
    deivg_to_json, generate_deiclevr, load_scene_graphs, save_scene_graphs, synthesize_deivg, synthetic_scenes, DeivgConfig,
    OperationKind, PromptStyle,
};
use serde::Serialize;

use super::{emit, to_json, CommonArgs};
use crate::error::CliError;
use crate::manifest::{manifest_path, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Deivg,
    Deiclevr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleArg {
    Comma,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OperationArg {
    Delete,
    Sort,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "deivg")]
    pub kind: DatasetKind,
    /// Relations per DeiVG prompt (1 to 3).
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Number of instances.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "comma")]
    pub style: StyleArg,
    /// Fail when fewer than `n` candidates exist.
    #[arg(long)]
    pub strict: bool,
    /// Source scene graphs for DeiVG.
    #[arg(long, conflicts_with = "synthetic")]
    pub scene_graphs: Option<PathBuf>,
    /// Generate this many synthetic scene graphs instead of reading them.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Where to save generated scene graphs.
    #[arg(long)]
    pub scenes_out: Option<PathBuf>,
    /// DeiCLEVR list operation.
    #[arg(long, value_enum, default_value = "delete")]
    pub operation: OperationArg,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let cfg = args.common.load()?;
    let mut outputs = Vec::new();
    let text = match args.kind {
        DatasetKind::Deiclevr => {
            let kind = match args.operation {
                OperationArg::Delete => OperationKind::Delete,
                OperationArg::Sort => OperationKind::Sort,
            };
            to_json(&generate_deiclevr(args.n, kind, args.seed))
        }
        DatasetKind::Deivg => {
            let scenes = match (&args.scene_graphs, args.synthetic) {
                (Some(p), _) => load_scene_graphs(p)?,
                (None, Some(m)) => {
                    let s = synthetic_scenes(m, &cfg.scenes, args.seed);
                    if let Some(p) = &args.scenes_out {
                        save_scene_graphs(&s, p)?;
                        outputs.push(p.clone());
                    }
                    s
                }
                (None, None) => return Err(CliError::input("DeiVG needs --scene-graphs or --synthetic")),
            };
            let dcfg = DeivgConfig {
                k: args.k,
                n: args.n,
                seed: args.seed,
                style: match args.style {
                    StyleArg::Comma => PromptStyle::Comma,
                    StyleArg::Plain => PromptStyle::Plain,
                },
                strict: args.strict,
            };
            let synth = synthesize_deivg(&scenes, &dcfg)?;
            if let Some(short) = synth.shortfall {
                log::warn!("only {} of {} instances could be drawn ({short} short)", synth.instances.len(), args.n);
            }
            deivg_to_json(&synth.instances)
        }
    };
    emit(args.out.as_deref(), &text)?;
    if let Some(out) = &args.out {
        outputs.insert(0, out.clone());
        let paths: Vec<&std::path::Path> = outputs.iter().map(|p| p.as_path()).collect();
        Manifest::new("synth", Some(args.seed), &args, &cfg, &paths).write(&manifest_path(out))?;
    }
    Ok(())
}
