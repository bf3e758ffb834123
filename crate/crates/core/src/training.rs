//! Learning merge weights of a mixture of scene-graph sources.
//!
//! Every source contributes its facts tagged with a source constant
//! (`sgg1`, `sgg2`, ...). The instance's conditions are evaluated per
//! source and merged by one weighted rule per source:
//!
//! ```text
//! cond1(X,SG):-onSgg(X,Y,SG),typeSgg(Y,boat,SG).
//! targetSgg(X,SG):-cond1(X,SG).
//! w1: target(X):-targetSgg(X,sgg1).
//! w2: target(X):-targetSgg(X,sgg2).
//! ```
//!
//! Weights are `w = sigmoid(theta)`; `theta` is updated with RMSProp on the
//! binary cross-entropy of the extracted target scores against IoU labels.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{corrupt_scene, DeicticInstance};
use crate::eval::{average_precision, mean_average_precision, EvalError, ScoredBox};
use crate::grounding::{compile, GroundingConfig, ReasoningGraph};
use crate::logic::{canonical_name, canonical_predicate, object_constant, parse_program, Atom, BBox, FactSet, Program, SceneGraph, TYPE_PREDICATE};
use crate::pipeline::PipelineError;
use crate::reasoner::{extract_targets, DifferentiableReasoner, ReasonerConfig, TargetPrediction};
use crate::rulegen::RulegenError;
use crate::scalar::Scalar;
use crate::valuation::ValuationVector;

/// Clamp applied to scores before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// `true` when the prediction overlaps some answer with IoU strictly above `threshold`.
pub fn label_predictions<T>(preds: &[TargetPrediction<T>], answers: &[BBox], threshold: f64) -> Vec<bool> {
    preds
        .iter()
        .map(|p| answers.iter().any(|a| iou(&p.bbox, a) > threshold))
        .collect()
}

fn clamp_score<T: Scalar>(s: T) -> T {
    let eps = T::of(BCE_EPS);
    s.max(eps).min(T::one() - eps)
}

/// Summed binary cross-entropy.
pub fn bce_loss<T: Scalar>(scores: &[T], labels: &[bool]) -> T {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = clamp_score(s);
            if y {
                -s.ln()
            } else {
                -(T::one() - s).ln()
            }
        })
        .sum()
}

/// d(bce)/d(s_i) = (s_i - y_i) / (s_i (1 - s_i)), at the clamped score.
pub fn bce_grad<T: Scalar>(scores: &[T], labels: &[bool]) -> Vec<T> {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = clamp_score(s);
            let y = if y { T::one() } else { T::zero() };
            (s - y) / (s * (T::one() - s))
        })
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ThetaInit {
    /// theta = 0, every weight 0.5.
    Zero,
    /// theta uniform in [-scale, scale], drawn from the training RNG.
    Uniform { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Labels require IoU strictly above this value.
    pub iou_threshold: f64,
    pub rmsprop_alpha: f64,
    pub rmsprop_eps: f64,
    pub seed: u64,
    /// Validation mAP is computed every this many steps (and after the last one).
    pub eval_every: usize,
    pub match_iou: f64,
    pub init: ThetaInit,
    pub reasoner: ReasonerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            steps: 200,
            batch_size: 1,
            iou_threshold: 0.8,
            rmsprop_alpha: 0.99,
            rmsprop_eps: 1e-8,
            seed: 0,
            eval_every: 1,
            match_iou: 0.5,
            init: ThetaInit::Zero,
            reasoner: ReasonerConfig::default().with_steps(4),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return bad(format!("iou_threshold must lie in (0, 1], got {}", self.iou_threshold));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.rmsprop_alpha) || !(self.rmsprop_eps > 0.0) {
            return bad("rmsprop_alpha must lie in [0, 1) and rmsprop_eps be positive".into());
        }
        self.reasoner.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("instance {index}: expected {expected} scene graphs, found {found}")]
    SourceCount { index: usize, expected: usize, found: usize },
    #[error("instance {index}: no scene graph for image {image_id}")]
    MissingScene { index: usize, image_id: u64 },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

/// Named scene-graph sources and their initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTask {
    pub sources: Vec<String>,
}

impl MixtureTask {
    pub fn new<S: Into<String>>(sources: impl IntoIterator<Item = S>) -> Self {
        Self {
            sources: sources.into_iter().map(Into::into).collect(),
        }
    }

    pub fn source_constant(k: usize) -> String {
        format!("sgg{}", k + 1)
    }
}

/// An instance with one scene graph per source, in task order.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureInstance {
    pub instance: DeicticInstance,
    pub graphs: Vec<SceneGraph>,
}

/// Pairs every instance with its ground-truth scene and a copy with `fraction`
/// of the relations dropped. Each image is corrupted once, with a seeded RNG.
pub fn corrupted_mixture(instances: &[DeicticInstance], scenes: &[SceneGraph], fraction: f64, seed: u64) -> Result<Vec<MixtureInstance>, TrainError> {
    let by_id: HashMap<u64, &SceneGraph> = scenes.iter().map(|s| (s.image_id, s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corrupted: HashMap<u64, SceneGraph> = HashMap::new();
    for s in scenes {
        corrupted.entry(s.image_id).or_insert_with(|| corrupt_scene(s, fraction, &mut rng));
    }
    instances
        .iter()
        .enumerate()
        .map(|(index, inst)| {
            let gt = by_id.get(&inst.image_id).ok_or(TrainError::MissingScene {
                index,
                image_id: inst.image_id,
            })?;
            Ok(MixtureInstance {
                instance: inst.clone(),
                graphs: vec![(*gt).clone(), corrupted[&inst.image_id].clone()],
            })
        })
        .collect()
}

/// Program for one instance over `sources` sources. Returns the program and the
/// positions of the merge rules, one per source.
pub fn mixture_program<A: AsRef<str>, B: AsRef<str>>(structured: &[(A, B)], sources: usize) -> Result<(Program, Vec<usize>), RulegenError> {
    if structured.is_empty() {
        return Err(RulegenError::EmptyPrompt);
    }
    let mut lines = Vec::new();
    let mut conds = Vec::new();
    for (i, (rel, attr)) in structured.iter().enumerate() {
        let rel = canonical_predicate(rel.as_ref()).ok_or_else(|| RulegenError::InvalidTerm(rel.as_ref().into()))?;
        let attr = canonical_name(attr.as_ref()).ok_or_else(|| RulegenError::InvalidTerm(attr.as_ref().into()))?;
        lines.push(format!("cond{n}(X,SG):-{rel}Sgg(X,Y,SG),typeSgg(Y,{attr},SG).", n = i + 1));
        conds.push(format!("cond{}(X,SG)", i + 1));
    }
    lines.push(format!("targetSgg(X,SG):-{}.", conds.join(",")));
    let first_merge = lines.len();
    for k in 0..sources {
        lines.push(format!("target(X):-targetSgg(X,{}).", MixtureTask::source_constant(k)));
    }
    let program = parse_program(&lines.join("\n")).map_err(|e| RulegenError::InvalidTerm(e.to_string()))?;
    Ok((program, (first_merge..first_merge + sources).collect()))
}

fn sgg_predicate(base: &str) -> String {
    format!("{base}Sgg")
}

/// Source-tagged facts. Objects are aligned by `object_id`, in the order of the
/// first graph, followed by objects only present in later graphs. The returned
/// scene holds the aligned object list.
pub fn mixture_facts(graphs: &[SceneGraph]) -> Result<(FactSet, ValuationVector<f64>, SceneGraph), PipelineError> {
    let mut objects = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for g in graphs {
        g.validate()?;
        for o in &g.objects {
            index.entry(o.object_id).or_insert_with(|| {
                objects.push(o.clone());
                objects.len() - 1
            });
        }
    }
    let mut facts = FactSet::new();
    let mut values = Vec::new();
    for i in 0..objects.len() {
        facts.add_entity(object_constant(i));
    }
    for k in 0..graphs.len() {
        facts.add_entity(MixtureTask::source_constant(k));
    }
    let mut push = |facts: &mut FactSet, atom: Atom, v: f64| {
        let (i, new) = facts.insert(atom);
        if new {
            values.push(v);
        } else if v > values[i] {
            values[i] = v;
        }
    };
    for (k, g) in graphs.iter().enumerate() {
        let tag = MixtureTask::source_constant(k);
        for r in &g.relations {
            let pred = sgg_predicate(&canonical_predicate(&r.predicate).expect("validated predicate"));
            let s = object_constant(index[&r.subject_id]);
            let o = object_constant(index[&r.object_id]);
            push(&mut facts, Atom::fact(&pred, &[s, o, tag.clone()]), r.score.unwrap_or(1.0));
        }
        for o in &g.objects {
            for name in o.names.iter().filter_map(|n| canonical_name(n)) {
                let atom = Atom::fact(&sgg_predicate(TYPE_PREDICATE), &[object_constant(index[&o.object_id]), name, tag.clone()]);
                push(&mut facts, atom, 1.0);
            }
        }
    }
    let scene = SceneGraph {
        image_id: graphs.first().map(|g| g.image_id).unwrap_or(0),
        objects,
        relations: Vec::new(),
    };
    Ok((facts, ValuationVector::from_clamped(values), scene))
}

/// One instance, grounded once; only the merge weights change during training.
#[derive(Debug, Clone)]
pub struct CompiledMixture {
    pub graph: ReasoningGraph,
    pub v0: ValuationVector<f64>,
    pub base_weights: Vec<f64>,
    pub merge_rules: Vec<usize>,
    pub scene: SceneGraph,
    pub answers: Vec<BBox>,
}

/// Loss, gradient with respect to theta, and the scored predictions.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub predictions: Vec<TargetPrediction>,
}

pub fn compile_mixture(inst: &MixtureInstance, sources: usize) -> Result<CompiledMixture, PipelineError> {
    let (program, merge_rules) = mixture_program(&inst.instance.structured, sources)?;
    let (facts, v0, scene) = mixture_facts(&inst.graphs)?;
    let graph = compile(&program, &facts, &GroundingConfig::default())?;
    Ok(CompiledMixture {
        graph,
        v0,
        base_weights: program.weights(),
        merge_rules,
        scene,
        answers: inst.instance.answers.iter().map(|o| o.bbox).collect(),
    })
}

impl CompiledMixture {
    pub fn weights(&self, theta: &[f64]) -> Vec<f64> {
        let mut w = self.base_weights.clone();
        for (&r, &t) in self.merge_rules.iter().zip(theta) {
            w[r] = sigmoid(t);
        }
        w
    }

    pub fn predictions(&self, theta: &[f64], cfg: &ReasonerConfig) -> Result<Vec<TargetPrediction>, PipelineError> {
        let r = DifferentiableReasoner::new(&self.graph, cfg.clone())?;
        let v = r.infer(&self.v0, &self.weights(theta))?;
        Ok(extract_targets(&self.graph, &v, &self.scene, cfg)?)
    }

    pub fn average_precision(&self, theta: &[f64], cfg: &TrainConfig) -> Result<f64, PipelineError> {
        let preds = self.predictions(theta, &cfg.reasoner)?;
        Ok(average_precision(&scored(&preds), &self.answers, cfg.match_iou))
    }

    /// BCE over the extracted predictions and its exact gradient through the reasoner.
    pub fn loss_and_grad(&self, theta: &[f64], cfg: &TrainConfig) -> Result<LossEval, PipelineError> {
        let weights = self.weights(theta);
        let mut r = DifferentiableReasoner::new(&self.graph, cfg.reasoner.clone())?;
        let v = r.forward(&self.v0, &weights)?;
        let predictions = extract_targets(&self.graph, &v, &self.scene, &cfg.reasoner)?;
        let labels = label_predictions(&predictions, &self.answers, cfg.iou_threshold);
        let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
        let loss = bce_loss(&scores, &labels);
        let mut loss_grad = vec![0.0; self.graph.atom_count()];
        for (p, g) in predictions.iter().zip(bce_grad(&scores, &labels)) {
            if let Some(id) = p.atom_id {
                loss_grad[id] += g;
            }
        }
        let grads = r.backward(&loss_grad)?;
        let grad = self
            .merge_rules
            .iter()
            .map(|&k| {
                let w = weights[k];
                grads.weights[k] * w * (1.0 - w)
            })
            .collect();
        Ok(LossEval { loss, grad, predictions })
    }
}

fn scored(preds: &[TargetPrediction]) -> Vec<ScoredBox> {
    preds.iter().map(|p| ScoredBox { bbox: p.bbox, score: p.score }).collect()
}

pub fn compile_all(data: &[MixtureInstance], sources: usize) -> Result<Vec<CompiledMixture>, TrainError> {
    data.iter()
        .enumerate()
        .map(|(index, inst)| {
            if inst.graphs.len() != sources {
                return Err(TrainError::SourceCount {
                    index,
                    expected: sources,
                    found: inst.graphs.len(),
                });
            }
            compile_mixture(inst, sources).map_err(|e| PipelineError::at(index)(e).into())
        })
        .collect()
}

/// mAP of a compiled split under the given parameters.
pub fn mixture_map(split: &[CompiledMixture], theta: &[f64], cfg: &TrainConfig) -> Result<f64, TrainError> {
    let aps = split
        .iter()
        .enumerate()
        .map(|(i, c)| c.average_precision(theta, cfg).map_err(PipelineError::at(i)))
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(mean_average_precision(&aps)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// ChaCha word position, as a decimal string (it exceeds 64 bits).
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub theta: Vec<f64>,
    pub config: TrainConfig,
    pub step: usize,
    pub rng_state: RngState,
    /// RMSProp running averages of squared gradients.
    #[serde(default)]
    pub sq_avg: Vec<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_json()).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = fs::read_to_string(path).map_err(|e| TrainError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: Option<f64>,
    #[serde(rename = "val_mAP")]
    pub val_map: Option<f64>,
}

/// Writes the trace as CSV with columns `step,loss,val_mAP`; missing values are empty.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// RMSProp state over the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    pub sq_avg: Vec<f64>,
}

impl RmsProp {
    pub fn new(lr: f64, alpha: f64, eps: f64, dim: usize) -> Self {
        Self {
            lr,
            alpha,
            eps,
            sq_avg: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.sq_avg) {
            *v = self.alpha * *v + (1.0 - self.alpha) * g * g;
            *p -= self.lr * g / (v.sqrt() + self.eps);
        }
    }
}

/// Training loop over precompiled splits.
pub struct Trainer {
    cfg: TrainConfig,
    theta: Vec<f64>,
    opt: RmsProp,
    step: usize,
    rng: ChaCha8Rng,
    train: Vec<CompiledMixture>,
    val: Vec<CompiledMixture>,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer").field("theta", &self.theta).field("step", &self.step).finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    pub weights: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub initial_val_map: f64,
    pub final_val_map: f64,
    pub checkpoint: Checkpoint,
}

impl Trainer {
    pub fn new(task: &MixtureTask, train: &[MixtureInstance], val: &[MixtureInstance], cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptySplit("training"));
        }
        let n = task.sources.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let theta = match cfg.init {
            ThetaInit::Zero => vec![0.0; n],
            ThetaInit::Uniform { scale } => (0..n).map(|_| rng.gen_range(-scale..=scale)).collect(),
        };
        Ok(Self {
            opt: RmsProp::new(cfg.lr, cfg.rmsprop_alpha, cfg.rmsprop_eps, n),
            theta,
            step: 0,
            rng,
            train: compile_all(train, n)?,
            val: compile_all(val, n)?,
            cfg: cfg.clone(),
        })
    }

    /// Continues from a checkpoint; the splits must be the ones it was trained on.
    pub fn from_checkpoint(ckpt: &Checkpoint, task: &MixtureTask, train: &[MixtureInstance], val: &[MixtureInstance]) -> Result<Self, TrainError> {
        if ckpt.theta.len() != task.sources.len() {
            return Err(TrainError::Checkpoint(format!(
                "{} parameters for {} sources",
                ckpt.theta.len(),
                task.sources.len()
            )));
        }
        let mut t = Self::new(task, train, val, &ckpt.config)?;
        let pos: u128 = ckpt
            .rng_state
            .word_pos
            .parse()
            .map_err(|e| TrainError::Checkpoint(format!("word_pos: {e}")))?;
        t.rng = ChaCha8Rng::seed_from_u64(ckpt.rng_state.seed);
        t.rng.set_word_pos(pos);
        t.theta = ckpt.theta.clone();
        t.step = ckpt.step;
        if ckpt.sq_avg.len() == t.theta.len() {
            t.opt.sq_avg = ckpt.sq_avg.clone();
        }
        Ok(t)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn weights(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| sigmoid(t)).collect()
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One RMSProp update on a freshly sampled batch; returns the mean batch loss.
    pub fn step(&mut self) -> Result<f64, TrainError> {
        let mut grad = vec![0.0; self.theta.len()];
        let mut loss = 0.0;
        let b = self.cfg.batch_size;
        for _ in 0..b {
            let i = self.rng.gen_range(0..self.train.len());
            let e = self.train[i].loss_and_grad(&self.theta, &self.cfg).map_err(PipelineError::at(i))?;
            loss += e.loss / b as f64;
            for (g, d) in grad.iter_mut().zip(&e.grad) {
                *g += d / b as f64;
            }
        }
        self.opt.step(&mut self.theta, &grad);
        self.step += 1;
        Ok(loss)
    }

    pub fn validation_map(&self) -> Result<Option<f64>, TrainError> {
        if self.val.is_empty() {
            return Ok(None);
        }
        mixture_map(&self.val, &self.theta, &self.cfg).map(Some)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            theta: self.theta.clone(),
            config: self.cfg.clone(),
            step: self.step,
            rng_state: RngState {
                seed: self.cfg.seed,
                word_pos: self.rng.get_word_pos().to_string(),
            },
            sq_avg: self.opt.sq_avg.clone(),
        }
    }

    /// Runs until `cfg.steps` updates have been made. Row 0 holds the starting validation mAP.
    pub fn run(&mut self) -> Result<TrainOutcome, TrainError> {
        let initial = self.validation_map()?;
        let mut trace = vec![TraceRow {
            step: self.step,
            loss: None,
            val_map: initial,
        }];
        let mut last = initial;
        while self.step < self.cfg.steps {
            let loss = self.step()?;
            let due = self.step % self.cfg.eval_every == 0 || self.step == self.cfg.steps;
            let val_map = if due { self.validation_map()? } else { None };
            if val_map.is_some() {
                last = val_map;
            }
            trace.push(TraceRow {
                step: self.step,
                loss: Some(loss),
                val_map,
            });
        }
        Ok(TrainOutcome {
            theta: self.theta.clone(),
            weights: self.weights(),
            trace,
            initial_val_map: initial.unwrap_or(f64::NAN),
            final_val_map: last.unwrap_or(f64::NAN),
            checkpoint: self.checkpoint(),
        })
    }
}

/// Trains merge weights on `train`, tracking mAP on `val`.
pub fn train_mixture(task: &MixtureTask, train: &[MixtureInstance], val: &[MixtureInstance], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    Trainer::new(task, train, val, cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synthesize_deivg, synthetic_scenes, DeivgConfig, SyntheticSceneConfig};
    use crate::logic::{Relation, SceneObject};
    use proptest::prelude::*;

    #[test]
    fn iou_reference() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 0.0, 5.0, 5.0)), 0.0);
        assert!((iou(&a, &BBox::new(5.0, 0.0, 10.0, 10.0)) - 50.0 / 150.0).abs() < 1e-15);
    }

    fn pred(b: BBox) -> TargetPrediction {
        TargetPrediction {
            object_constant: "obj1".into(),
            object_id: 1,
            bbox: b,
            score: 0.5,
            fallback: false,
            atom_id: None,
        }
    }

    #[test]
    fn labels_use_strict_threshold() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        // iou = 80 / 100
        let b = BBox::new(0.0, 0.0, 8.0, 10.0);
        let labels = label_predictions(&[pred(a), pred(b), pred(BBox::new(50.0, 0.0, 1.0, 1.0))], &[a], 0.8);
        assert_eq!(labels, [true, false, false]);
    }

    #[test]
    fn bce_reference() {
        assert!((bce_loss(&[0.5], &[true]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(&[1.0 - 1e-7], &[true]) < 1e-6);
        assert!(bce_loss(&[0.0_f64], &[false]).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn bce_grad_matches_differences(s in 0.01..0.99f64, y in any::<bool>()) {
            let h = 1e-6;
            let fd = (bce_loss(&[s + h], &[y]) - bce_loss(&[s - h], &[y])) / (2.0 * h);
            let g = bce_grad(&[s], &[y])[0];
            prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(1.0), "{} vs {}", g, fd);
        }
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = vec![0.0];
        let mut opt = RmsProp::new(0.01, 0.99, 1e-8, 1);
        opt.step(&mut p, &[2.0]);
        // v = 0.01 * 4, step = 0.01 * 2 / 0.2
        assert!((p[0] + 0.1).abs() < 1e-7);
    }

    fn tiny_mixture() -> (MixtureInstance, MixtureTask) {
        let obj = |id: u64, name: &str, x: f64| SceneObject {
            object_id: id,
            names: vec![name.into()],
            synsets: vec![format!("{name}.n.01")],
            bbox: BBox::new(x, 0.0, 10.0, 10.0),
        };
        let gt = SceneGraph {
            image_id: 1,
            objects: vec![obj(1, "person", 0.0), obj(2, "boat", 20.0), obj(3, "person", 40.0)],
            relations: vec![Relation::new(1, "on", 2), Relation::new(3, "on", 2)],
        };
        let mut corrupted = gt.clone();
        corrupted.relations.truncate(1);
        let instance = DeicticInstance {
            deictic_prompt: "an object that is on a boat".into(),
            answers: vec![gt.objects[0].clone(), gt.objects[2].clone()],
            image_id: 1,
            data_index: None,
            structured: vec![("on".into(), "boat".into())],
            complexity: 1,
        };
        (
            MixtureInstance {
                instance,
                graphs: vec![gt, corrupted],
            },
            MixtureTask::new(["ground_truth", "corrupted"]),
        )
    }

    #[test]
    fn program_shape() {
        let (p, merge) = mixture_program(&[("on", "boat"), ("holding", "umbrella")], 2).unwrap();
        let text = p.to_string();
        assert!(text.contains("cond1(X,SG):-onSgg(X,Y,SG),typeSgg(Y,boat,SG)."));
        assert!(text.contains("targetSgg(X,SG):-cond1(X,SG),cond2(X,SG)."));
        assert!(text.contains("target(X):-targetSgg(X,sgg2)."));
        assert_eq!(merge, [3, 4]);
    }

    #[test]
    fn facts_are_tagged_by_source() {
        let (m, _) = tiny_mixture();
        let (facts, _, scene) = mixture_facts(&m.graphs).unwrap();
        assert!(facts.contains(&Atom::fact("onSgg", &["obj1", "obj2", "sgg1"])));
        assert!(facts.contains(&Atom::fact("onSgg", &["obj3", "obj2", "sgg1"])));
        assert!(!facts.contains(&Atom::fact("onSgg", &["obj3", "obj2", "sgg2"])));
        assert!(facts.contains(&Atom::fact("typeSgg", &["obj2", "boat", "sgg2"])));
        assert_eq!(scene.objects.len(), 3);
        assert!(facts.entities().contains("sgg2"));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (m, task) = tiny_mixture();
        let c = compile_mixture(&m, task.sources.len()).unwrap();
        let cfg = TrainConfig {
            reasoner: ReasonerConfig::default().with_steps(4).with_gamma(0.1),
            ..Default::default()
        };
        let theta = [0.3_f64, -0.2];
        let e = c.loss_and_grad(&theta, &cfg).unwrap();
        for k in 0..2 {
            let h = 1e-5;
            let mut up = theta;
            up[k] += h;
            let mut down = theta;
            down[k] -= h;
            let fd = (c.loss_and_grad(&up, &cfg).unwrap().loss - c.loss_and_grad(&down, &cfg).unwrap().loss) / (2.0 * h);
            assert!((e.grad[k] - fd).abs() <= 1e-3 * e.grad[k].abs().max(fd.abs()) + 1e-9, "{k}: {} vs {fd}", e.grad[k]);
        }
        assert!(e.grad[0] < e.grad[1], "ground truth should be pushed up harder");
    }

    #[test]
    fn ground_truth_weight_wins() {
        let (m, task) = tiny_mixture();
        let cfg = TrainConfig {
            steps: 50,
            eval_every: 10,
            ..Default::default()
        };
        // the corrupted source misses everything on the second instance
        let mut blind = m.clone();
        blind.graphs[1].relations.clear();
        let out = train_mixture(&task, &[m.clone(), blind], &[m], &cfg).unwrap();
        assert!(out.weights[0] > out.weights[1] + 0.01, "{:?}", out.weights);
        assert_eq!(out.trace.len(), 51);
        assert!(out.trace[1].val_map.is_none());
        assert!(out.trace[10].val_map.is_some());
    }

    #[test]
    fn zero_steps_keep_initial_weights() {
        let (m, task) = tiny_mixture();
        let cfg = TrainConfig { steps: 0, ..Default::default() };
        let out = train_mixture(&task, std::slice::from_ref(&m), std::slice::from_ref(&m), &cfg).unwrap();
        assert_eq!(out.weights, [0.5, 0.5]);
    }

    #[test]
    fn identical_sources_stay_equal() {
        let scenes = synthetic_scenes(10, &SyntheticSceneConfig::default(), 2);
        let d = synthesize_deivg(&scenes, &DeivgConfig { k: 1, n: 20, seed: 1, ..Default::default() }).unwrap();
        let data: Vec<MixtureInstance> = corrupted_mixture(&d.instances, &scenes, 0.0, 0).unwrap();
        let task = MixtureTask::new(["a", "b"]);
        let cfg = TrainConfig { steps: 30, eval_every: 30, ..Default::default() };
        let out = train_mixture(&task, &data, &data[..5], &cfg).unwrap();
        assert!((out.weights[0] - out.weights[1]).abs() < 0.05);
    }

    #[test]
    fn checkpoint_resume_is_exact() {
        let (m, task) = tiny_mixture();
        let cfg = TrainConfig {
            steps: 20,
            eval_every: 20,
            ..Default::default()
        };
        let data = vec![m.clone(), m];
        let full = train_mixture(&task, &data, &data, &cfg).unwrap();
        let mut half = Trainer::new(&task, &data, &data, &TrainConfig { steps: 10, ..cfg.clone() }).unwrap();
        half.run().unwrap();
        let mut ck = half.checkpoint();
        ck.config.steps = 20;
        let json = ck.to_json();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let mut resumed = Trainer::from_checkpoint(&back, &task, &data, &data).unwrap();
        let out = resumed.run().unwrap();
        assert_eq!(out.theta, full.theta);
        let mut buf = Vec::new();
        write_trace_csv(&full.trace[..2], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,loss,val_mAP\n0,,"), "{text}");
    }
}
