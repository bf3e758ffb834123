//! Box-level average precision against answer sets.
//!
//! Predictions are matched greedily in descending score order; a prediction
//! is a true positive when its IoU with a still unmatched answer exceeds
//! `match_iou`. AP is the area under the all-point interpolated
//! precision-recall curve.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub match_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { match_iou: 0.5 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("match_iou must lie in (0, 1], got {0}")]
    InvalidConfig(f64),
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.match_iou > 0.0 && self.match_iou <= 1.0 {
            Ok(())
        } else {
            Err(EvalError::InvalidConfig(self.match_iou))
        }
    }
}

/// A scored box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Index into the caller's prediction list.
    pub prediction: usize,
    pub answer: usize,
    pub iou: f64,
}

/// Prediction indices in descending score order; ties keep input order.
fn ranked(preds: &[ScoredBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.partial_cmp(&preds[a].score).unwrap_or(std::cmp::Ordering::Equal));
    order
}

/// Greedy one-to-one matching. Returns the pairs in rank order.
pub fn match_predictions(preds: &[ScoredBox], answers: &[BBox], match_iou: f64) -> Vec<MatchedPair> {
    let mut taken = vec![false; answers.len()];
    let mut pairs = Vec::new();
    for i in ranked(preds) {
        let best = answers
            .iter()
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .map(|(j, a)| (j, preds[i].bbox.iou(a)))
            .filter(|(_, iou)| *iou > match_iou)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        if let Some((j, iou)) = best {
            taken[j] = true;
            pairs.push(MatchedPair {
                prediction: i,
                answer: j,
                iou,
            });
        }
    }
    pairs
}

/// All-point interpolated AP. Zero when there are no predictions or no answers.
pub fn average_precision(preds: &[ScoredBox], answers: &[BBox], match_iou: f64) -> f64 {
    if preds.is_empty() || answers.is_empty() {
        return 0.0;
    }
    let matched: Vec<usize> = match_predictions(preds, answers, match_iou).iter().map(|p| p.prediction).collect();
    let mut tp = 0usize;
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    for (rank, i) in ranked(preds).into_iter().enumerate() {
        if matched.contains(&i) {
            tp += 1;
        }
        recall.push(tp as f64 / answers.len() as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for k in (0..precision.len() - 1).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    recall.windows(2).zip(&precision[1..]).map(|(r, p)| (r[1] - r[0]) * p).sum()
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64, EvalError> {
    if aps.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Predictions and answers of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub id: String,
    pub predictions: Vec<ScoredBox>,
    pub answers: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    pub ap: f64,
    pub matches: Vec<MatchedPair>,
    pub predictions: usize,
    pub answers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub per_instance: Vec<InstanceResult>,
    pub config: EvalConfig,
}

pub fn evaluate_instance(inst: &EvalInstance, cfg: &EvalConfig) -> InstanceResult {
    InstanceResult {
        id: inst.id.clone(),
        ap: average_precision(&inst.predictions, &inst.answers, cfg.match_iou),
        matches: match_predictions(&inst.predictions, &inst.answers, cfg.match_iou),
        predictions: inst.predictions.len(),
        answers: inst.answers.len(),
    }
}

pub fn evaluate(instances: &[EvalInstance], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let per_instance: Vec<InstanceResult> = instances.iter().map(|i| evaluate_instance(i, cfg)).collect();
    let aps: Vec<f64> = per_instance.iter().map(|r| r.ap).collect();
    Ok(EvalReport {
        map: mean_average_precision(&aps)?,
        per_instance,
        config: *cfg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// `prediction` or `answer`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub id: String,
    pub boxes: Vec<OverlayBox>,
}

/// Per-instance box lists for drawing tools.
pub fn overlays(instances: &[EvalInstance], report: &EvalReport) -> Vec<Overlay> {
    instances
        .iter()
        .zip(&report.per_instance)
        .map(|(inst, res)| {
            let mut boxes: Vec<OverlayBox> = inst
                .predictions
                .iter()
                .enumerate()
                .map(|(i, p)| OverlayBox {
                    bbox: p.bbox,
                    kind: "prediction".into(),
                    score: Some(p.score),
                    matched: res.matches.iter().any(|m| m.prediction == i),
                })
                .collect();
            boxes.extend(inst.answers.iter().enumerate().map(|(j, a)| OverlayBox {
                bbox: *a,
                kind: "answer".into(),
                score: None,
                matched: res.matches.iter().any(|m| m.answer == j),
            }));
            Overlay { id: inst.id.clone(), boxes }
        })
        .collect()
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text table, one row per instance plus the mean.
    pub fn table(&self) -> String {
        let width = self.per_instance.iter().map(|r| r.id.len()).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>5}  {:>7}  {:>8}", "instance", "AP", "preds", "answers", "matched");
        for r in &self.per_instance {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6.4}  {:>5}  {:>7}  {:>8}",
                r.id,
                r.ap,
                r.predictions,
                r.answers,
                r.matches.len()
            );
        }
        let _ = writeln!(out, "{:<width$}  {:>6.4}  (match_iou {})", "mAP", self.map, self.config.match_iou);
        out
    }
}
