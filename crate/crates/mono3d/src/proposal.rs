//! Anchor grids, proposal labeling, and box refinement.
//!
//! Anchors are area-preserving: a scale `s` is the square root of the box
//! area, an aspect ratio `r` is width over height, so a base anchor has
//! `w = s * sqrt(r)` and `h = s / sqrt(r)`. One base anchor per
//! (ratio, scale) pair is replicated at every stride-spaced grid location.

use serde::{Deserialize, Serialize};

use crate::codec::{decode_box_deltas, BoxDeltas};
use crate::geom::{iou, Box2D, CameraIntrinsics};

/// Anchor layout. The defaults give 70 anchors per location: 7 aspect ratios
/// crossed with 10 scales spaced geometrically from 16 to 600 pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    /// Width-over-height ratios.
    pub aspect_ratios: Vec<f64>,
    /// Square-root-of-area scales in pixels.
    pub scales: Vec<f64>,
    /// Grid step in pixels.
    pub stride: u32,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        let n_scales = 10;
        let (lo, hi) = (16.0f64, 600.0f64);
        let scales = (0..n_scales)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n_scales - 1) as f64))
            .collect();
        Self { aspect_ratios: vec![0.5, 0.7, 1.0, 1.5, 2.0, 2.5, 3.0], scales, stride: 16 }
    }
}

impl AnchorConfig {
    /// Anchors per grid location.
    pub fn anchors_per_location(&self) -> usize {
        self.aspect_ratios.len() * self.scales.len()
    }
}

/// All anchors for an image, ordered location-major (row by row, then the
/// ratio x scale block at each location). Anchor centers sit at the middle of
/// each stride cell; boxes may extend past the image bounds.
pub fn generate_anchors(cfg: &AnchorConfig, k: &CameraIntrinsics) -> Vec<Box2D> {
    let grid_w = (k.img_w as f64 / cfg.stride as f64).ceil() as u32;
    let grid_h = (k.img_h as f64 / cfg.stride as f64).ceil() as u32;
    let mut out = Vec::with_capacity((grid_w * grid_h) as usize * cfg.anchors_per_location());
    for iy in 0..grid_h {
        for ix in 0..grid_w {
            let cx = (ix as f64 + 0.5) * cfg.stride as f64;
            let cy = (iy as f64 + 0.5) * cfg.stride as f64;
            for &r in &cfg.aspect_ratios {
                for &s in &cfg.scales {
                    out.push(Box2D::new(cx, cy, s * r.sqrt(), s / r.sqrt()));
                }
            }
        }
    }
    out
}

/// Label for one proposal: positive proposals remember which ground-truth
/// box they matched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalLabel {
    pub positive: bool,
    pub matched_gt: Option<usize>,
}

/// Default IoU above which a proposal counts as positive.
pub const DEFAULT_POSITIVE_IOU: f64 = 0.7;

/// Labels each proposal by its best-overlapping ground-truth box.
///
/// A proposal is positive iff its highest IoU against any ground truth is
/// strictly greater than `threshold`; the argmax ground truth is recorded
/// (lowest index on ties). There is no per-ground-truth forcing: with no
/// ground truths, or none above the threshold, a proposal stays negative.
pub fn assign_labels(proposals: &[Box2D], gts: &[Box2D], threshold: f64) -> Vec<ProposalLabel> {
    proposals
        .iter()
        .map(|p| {
            let mut best = 0.0f64;
            let mut best_gt = None;
            for (gi, gt) in gts.iter().enumerate() {
                let o = iou(p, gt);
                if o > best {
                    best = o;
                    best_gt = Some(gi);
                }
            }
            if best > threshold {
                ProposalLabel { positive: true, matched_gt: best_gt }
            } else {
                ProposalLabel { positive: false, matched_gt: None }
            }
        })
        .collect()
}

/// Applies predicted deltas to proposals and clips the result to the image.
///
/// Every output box lies inside `[0, img_w] x [0, img_h]` with at least one
/// pixel of extent per axis.
pub fn refine_boxes(proposals: &[Box2D], deltas: &[BoxDeltas], k: &CameraIntrinsics) -> Vec<Box2D> {
    assert_eq!(proposals.len(), deltas.len(), "one delta set per proposal");
    proposals
        .iter()
        .zip(deltas)
        .map(|(p, d)| clip_to_image(&decode_box_deltas(p, d), k))
        .collect()
}

/// Clamps a box into the image, enforcing a minimum 1-pixel extent.
pub fn clip_to_image(b: &Box2D, k: &CameraIntrinsics) -> Box2D {
    let (w, h) = (k.img_w as f64, k.img_h as f64);
    let clamp_axis = |lo: f64, hi: f64, limit: f64| -> (f64, f64) {
        let (mut lo, mut hi) = (lo.clamp(0.0, limit), hi.clamp(0.0, limit));
        if hi - lo < 1.0 {
            let c = ((lo + hi) / 2.0).clamp(0.5, limit - 0.5);
            lo = c - 0.5;
            hi = c + 0.5;
        }
        (lo, hi)
    };
    let (x1, y1, x2, y2) = b.corners();
    let (x1, x2) = clamp_axis(x1, x2, w);
    let (y1, y2) = clamp_axis(y1, y2, h);
    Box2D::from_corners(x1, y1, x2, y2)
}
