//! Multi-task training losses with analytic gradients.
//!
//! Every loss returns `(value, gradients)` where the gradients are taken with
//! respect to the *predicted* quantities. Regression terms use smooth-L1,
//! classification terms use softmax log loss. Losses attached to a proposal
//! are gated by its positive/negative label: a negative proposal contributes
//! only its objectness classification term, and every gated gradient is
//! exactly zero (not merely small).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::targets::{BoxDeltas, NormalizedParts, TemplateSimilarity, VisibilityVector};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("predicted and target {what} lengths differ: {pred} vs {target}")]
    LengthMismatch { what: &'static str, pred: usize, target: usize },
    #[error("class index {class} out of range for {n_classes} logits")]
    ClassOutOfRange { class: usize, n_classes: usize },
}

/// Per-task weights. The part term is weighted 3x by default; all other
/// tasks weigh 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
    pub parts: f64,
    pub vis: f64,
    pub temp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 1.0, reg: 1.0, parts: 3.0, vis: 1.0, temp: 1.0 }
    }
}

/// Smooth-L1 penalty: `0.5 x^2` for `|x| < 1`, `|x| - 0.5` beyond.
/// Returns `(value, dvalue/dx)`; continuous with continuous first derivative.
pub fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

/// Negative log softmax probability of `class`. Returns the loss and its
/// gradient with respect to the logits (`softmax - one_hot`).
pub fn softmax_log_loss(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>), LossError> {
    if class >= logits.len() {
        return Err(LossError::ClassOutOfRange { class, n_classes: logits.len() });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_sum = max + sum_exp.ln();
    let value = log_sum - logits[class];
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - max).exp() / sum_exp).collect();
    grad[class] -= 1.0;
    Ok((value, grad))
}

/// Summed smooth-L1 over a slice of residuals; gradient per residual.
fn smooth_l1_sum(residuals: impl Iterator<Item = f64>, scale: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grads = Vec::new();
    for r in residuals {
        let (v, g) = smooth_l1(r);
        value += scale * v;
        grads.push(scale * g);
    }
    (value, grads)
}

/// Gradients of [`detection_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionGrads {
    pub class_logits: [f64; 2],
    pub deltas: [f64; 4],
}

/// Objectness classification plus gated box regression for one proposal.
///
/// `positive` is the proposal's label: negatives keep the classification term
/// (target class 0) and contribute no regression loss or gradient.
pub fn detection_loss(
    class_logits: &[f64; 2],
    pred_deltas: &BoxDeltas,
    target_deltas: &BoxDeltas,
    positive: bool,
    w: &LossWeights,
) -> (f64, DetectionGrads) {
    let class = positive as usize;
    let (cls_value, cls_grad) =
        softmax_log_loss(class_logits, class).expect("2 logits always cover classes {0, 1}");
    let mut value = w.cls * cls_value;
    let mut grads = DetectionGrads {
        class_logits: [w.cls * cls_grad[0], w.cls * cls_grad[1]],
        deltas: [0.0; 4],
    };
    if positive {
        let pred = pred_deltas.as_array();
        let target = target_deltas.as_array();
        let (reg_value, reg_grads) =
            smooth_l1_sum((0..4).map(|i| pred[i] - target[i]), w.reg);
        value += reg_value;
        grads.deltas.copy_from_slice(&reg_grads);
    }
    (value, grads)
}

/// Part-coordinate regression, gated by the proposal label.
pub fn part_loss(
    pred: &NormalizedParts,
    target: &NormalizedParts,
    positive: bool,
    w: &LossWeights,
) -> Result<(f64, Vec<[f64; 2]>), LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch {
            what: "part",
            pred: pred.len(),
            target: target.len(),
        });
    }
    if !positive {
        return Ok((0.0, vec![[0.0; 2]; pred.len()]));
    }
    let mut value = 0.0;
    let mut grads = vec![[0.0; 2]; pred.len()];
    for (k, (p, t)) in pred.iter().zip(target).enumerate() {
        for a in 0..2 {
            let (v, g) = smooth_l1(p[a] - t[a]);
            value += w.parts * v;
            grads[k][a] = w.parts * g;
        }
    }
    Ok((value, grads))
}

/// Per-part 4-way visibility classification, gated by the proposal label.
pub fn visibility_loss(
    logits: &[[f64; 4]],
    target: &VisibilityVector,
    positive: bool,
    w: &LossWeights,
) -> Result<(f64, Vec<[f64; 4]>), LossError> {
    if logits.len() != target.len() {
        return Err(LossError::LengthMismatch {
            what: "visibility",
            pred: logits.len(),
            target: target.len(),
        });
    }
    if !positive {
        return Ok((0.0, vec![[0.0; 4]; logits.len()]));
    }
    let mut value = 0.0;
    let mut grads = vec![[0.0; 4]; logits.len()];
    for (k, (row, label)) in logits.iter().zip(target).enumerate() {
        let (v, g) = softmax_log_loss(row, label.class_index())?;
        value += w.vis * v;
        for a in 0..4 {
            grads[k][a] = w.vis * g[a];
        }
    }
    Ok((value, grads))
}

/// Template-similarity regression in log space, gated by the proposal label.
pub fn template_loss(
    pred: &TemplateSimilarity,
    target: &TemplateSimilarity,
    positive: bool,
    w: &LossWeights,
) -> Result<(f64, Vec<[f64; 3]>), LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch {
            what: "template similarity",
            pred: pred.len(),
            target: target.len(),
        });
    }
    if !positive {
        return Ok((0.0, vec![[0.0; 3]; pred.len()]));
    }
    let mut value = 0.0;
    let mut grads = vec![[0.0; 3]; pred.len()];
    for (m, (p, t)) in pred.log_ratios.iter().zip(&target.log_ratios).enumerate() {
        for a in 0..3 {
            let (v, g) = smooth_l1(p[a] - t[a]);
            value += w.temp * v;
            grads[m][a] = w.temp * g;
        }
    }
    Ok((value, grads))
}

/// Detection terms for one proposal at any stage.
#[derive(Debug, Clone)]
pub struct DetectionSample {
    pub class_logits: [f64; 2],
    pub pred_deltas: BoxDeltas,
    pub target_deltas: BoxDeltas,
    pub positive: bool,
}

/// Second-stage proposal: detection plus part regression.
#[derive(Debug, Clone)]
pub struct RefinementSample {
    pub det: DetectionSample,
    pub pred_parts: NormalizedParts,
    pub target_parts: NormalizedParts,
}

/// Final-stage proposal: detection, parts, visibility, and template terms.
#[derive(Debug, Clone)]
pub struct FullSample {
    pub det: DetectionSample,
    pub pred_parts: NormalizedParts,
    pub target_parts: NormalizedParts,
    pub vis_logits: Vec<[f64; 4]>,
    pub target_vis: VisibilityVector,
    pub pred_similarity: TemplateSimilarity,
    pub target_similarity: TemplateSimilarity,
}

/// Global objective: the sum of the three stage losses.
///
/// Stage one carries detection terms only (region proposals); stage two adds
/// part regression; stage three adds visibility and template terms.
pub fn total_loss(
    stage1: &[DetectionSample],
    stage2: &[RefinementSample],
    stage3: &[FullSample],
    w: &LossWeights,
) -> Result<f64, LossError> {
    let det = |s: &DetectionSample| {
        detection_loss(&s.class_logits, &s.pred_deltas, &s.target_deltas, s.positive, w).0
    };
    let mut total = 0.0;
    for s in stage1 {
        total += det(s);
    }
    for s in stage2 {
        total += det(&s.det);
        total += part_loss(&s.pred_parts, &s.target_parts, s.det.positive, w)?.0;
    }
    for s in stage3 {
        total += det(&s.det);
        total += part_loss(&s.pred_parts, &s.target_parts, s.det.positive, w)?.0;
        total += visibility_loss(&s.vis_logits, &s.target_vis, s.det.positive, w)?.0;
        total += template_loss(&s.pred_similarity, &s.target_similarity, s.det.positive, w)?.0;
    }
    Ok(total)
}
