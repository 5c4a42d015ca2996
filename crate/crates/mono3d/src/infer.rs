//! 3D recovery from 2D detection records.
//!
//! A detection record is what a trained detector would emit for one
//! vehicle: scored 2D box, per-part image locations, per-part visibility
//! scores, and per-model template similarity. This module turns records
//! into full 3D hypotheses: pick the best-matching shape model, rebuild
//! the vehicle's template from the similarity code, and solve for pose by
//! matching the model's 3D parts against the predicted 2D parts.

use serde::{Deserialize, Serialize};

use crate::bank::{scale_shape_to_template, ShapeBank, Template3D};
use crate::codec::{apply_template_similarity, TemplateSimilarity, Visibility};
use crate::geom::{nms, transform_point, Box2D, Box3D, CameraIntrinsics, Point2, Point3, ScoredBox};
use crate::pose::{solve_pose, PnPOptions, PoseError};

/// Per-vehicle output of the 2D stages, input to 3D recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub box2d: Box2D,
    pub score: f64,
    /// Predicted part locations in pixels (one per bank part).
    pub parts2d: Vec<Point2>,
    /// Per-part class scores ordered (visible, occluded, self-occluded,
    /// truncated).
    pub vis_scores: Vec<[f64; 4]>,
    /// Per-model template similarity (log dimension ratios).
    pub template_sim: TemplateSimilarity,
}

/// A detection lifted to 3D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub box2d: Box2D,
    pub score: f64,
    /// Shape model selected from the similarity code.
    pub model_index: usize,
    pub box3d: Box3D,
    /// The part predictions the pose was solved from.
    pub parts2d: Vec<Point2>,
    /// Hard per-part visibility classes (argmax of the scores).
    pub visibility: Vec<Visibility>,
    /// Camera-frame part locations implied by the recovered pose.
    pub parts3d: Vec<Point3>,
    pub reproj_rmse: f64,
    pub converged: bool,
}

/// Errors lifting a single record to 3D.
#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("record carries {got} parts, bank expects {expected}")]
    PartCountMismatch { got: usize, expected: usize },
    #[error("record carries {got} template rows, bank has {expected} models")]
    ModelCountMismatch { got: usize, expected: usize },
    #[error("pose recovery failed: {0}")]
    Pose(#[from] PoseError),
}

/// Inference pipeline settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Keep at most this many detections per image (by score) before
    /// suppression.
    pub score_cap: usize,
    /// Overlap threshold for non-maximum suppression.
    pub nms_threshold: f64,
    pub pnp: PnPOptions,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { score_cap: 200, nms_threshold: 0.5, pnp: PnPOptions::default() }
    }
}

/// Index of the shape model whose template the similarity code matches
/// best (smallest log-ratio norm, first winner on ties).
pub fn select_template(sim: &TemplateSimilarity) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, r) in sim.log_ratios.iter().enumerate() {
        let d = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lifts one detection record to a 3D hypothesis.
pub fn recover_3d(
    record: &DetectionRecord,
    bank: &ShapeBank,
    camera: &CameraIntrinsics,
    pnp: &PnPOptions,
) -> Result<ResultRecord, InferError> {
    if record.parts2d.len() != bank.n_parts {
        return Err(InferError::PartCountMismatch {
            got: record.parts2d.len(),
            expected: bank.n_parts,
        });
    }
    if record.vis_scores.len() != bank.n_parts {
        return Err(InferError::PartCountMismatch {
            got: record.vis_scores.len(),
            expected: bank.n_parts,
        });
    }
    if record.template_sim.len() != bank.models.len() {
        return Err(InferError::ModelCountMismatch {
            got: record.template_sim.len(),
            expected: bank.models.len(),
        });
    }
    let model_index = select_template(&record.template_sim);
    let template: Template3D = apply_template_similarity(&record.template_sim, bank, model_index);
    let model = &bank.models[model_index];
    let shape = scale_shape_to_template(&model.parts, &model.template, &template);
    let solution = solve_pose(&shape.points, &record.parts2d, camera, pnp)?;
    let parts3d: Vec<Point3> =
        shape.points.iter().map(|&p| transform_point(&solution.pose, p)).collect();
    let visibility = record
        .vis_scores
        .iter()
        .map(|scores| {
            let mut arg = 0usize;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[arg] {
                    arg = i;
                }
            }
            Visibility::from_class_index(arg).expect("argmax of 4 scores is a valid class")
        })
        .collect();
    Ok(ResultRecord {
        box2d: record.box2d,
        score: record.score,
        model_index,
        box3d: Box3D {
            center: solution.pose.t,
            yaw: solution.pose.yaw,
            template,
        },
        parts2d: record.parts2d.clone(),
        visibility,
        parts3d,
        reproj_rmse: solution.reproj_rmse,
        converged: solution.converged,
    })
}

/// Runs the full per-image pipeline: score cap, suppression, 3D recovery.
///
/// Records whose 3D recovery fails are dropped with a warning; a single
/// bad detection must not kill the batch.
pub fn run_inference(
    records: &[DetectionRecord],
    bank: &ShapeBank,
    camera: &CameraIntrinsics,
    config: &InferenceConfig,
) -> Vec<ResultRecord> {
    // Top-k by score, ties kept in input order.
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b].score.partial_cmp(&records[a].score).unwrap().then(a.cmp(&b))
    });
    order.truncate(config.score_cap);
    let boxes: Vec<ScoredBox> = order
        .iter()
        .map(|&i| ScoredBox { box2d: records[i].box2d, score: records[i].score })
        .collect();
    let kept = nms(&boxes, config.nms_threshold);
    let mut out = Vec::with_capacity(kept.len());
    for k in kept {
        let record = &records[order[k]];
        match recover_3d(record, bank, camera, &config.pnp) {
            Ok(result) => out.push(result),
            Err(err) => {
                log::warn!(
                    "dropping detection at ({:.1}, {:.1}) score {:.3}: {err}",
                    record.box2d.cx,
                    record.box2d.cy,
                    record.score
                );
            }
        }
    }
    out
}
