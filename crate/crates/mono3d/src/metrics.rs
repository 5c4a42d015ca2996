//! Evaluation metrics for 2D detection and the 3D quantities recovered
//! from it.
//!
//! Detections are greedily matched to ground truth in score order with an
//! inclusive IoU threshold. From one matching pass the module derives:
//!
//! * interpolated average precision (11- or 41-point),
//! * average orientation similarity (precision weighted by heading
//!   agreement on true positives),
//! * average localization precision (precision restricted to true
//!   positives whose 3D center lands within a distance threshold),
//! * part localization rate, visibility accuracy, and template accuracy
//!   over matched pairs.
//!
//! Ground truth marked `ignore`, and ground truth outside the selected
//! difficulty, neither count toward recall nor penalize detections that
//! overlap them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotate::VehicleGT;
use crate::geom::{iou, normalize_angle};
use crate::infer::ResultRecord;

/// KITTI-style difficulty buckets, filtering ground truth by projected
/// height, occlusion level, and truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    /// No filtering: every non-ignored ground truth counts.
    All,
}

impl Difficulty {
    /// Whether a ground-truth vehicle belongs to this bucket.
    pub fn keeps(self, gt: &VehicleGT) -> bool {
        let (min_h, max_occ, max_trunc) = match self {
            Difficulty::Easy => (40.0, 0, 0.15),
            Difficulty::Moderate => (25.0, 1, 0.30),
            Difficulty::Hard => (25.0, 2, 0.50),
            Difficulty::All => return true,
        };
        gt.box2d.h >= min_h && gt.occlusion <= max_occ && gt.truncation <= max_trunc
    }
}

/// Number of evenly spaced recall points for interpolated averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpPoints {
    #[serde(rename = "11")]
    Eleven,
    #[serde(rename = "41")]
    FortyOne,
}

impl InterpPoints {
    pub fn count(self) -> usize {
        match self {
            InterpPoints::Eleven => 11,
            InterpPoints::FortyOne => 41,
        }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Inclusive IoU threshold for detection/ground-truth matching.
    pub iou_threshold: f64,
    pub interp: InterpPoints,
    pub difficulty: Difficulty,
    /// 3D center distance thresholds (meters) for localization precision.
    pub alp_thresholds: Vec<f64>,
    /// A part counts as localized when its pixel error, rescaled as if the
    /// ground-truth box were `part_ref_height` pixels tall, stays under
    /// this threshold (strict).
    pub part_px_threshold: f64,
    pub part_ref_height: f64,
    /// Relative tolerance for per-dimension template agreement (strict).
    pub template_tolerance: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.7,
            interp: InterpPoints::Eleven,
            difficulty: Difficulty::All,
            alp_thresholds: vec![1.0, 2.0],
            part_px_threshold: 20.0,
            part_ref_height: 155.0,
            template_tolerance: 0.2,
        }
    }
}

/// Per-detection outcome of matching, aligned with the detection list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    /// Matched the ground truth at this index (into the image's list).
    TruePositive { gt_index: usize },
    FalsePositive,
    /// Overlapped only ignored ground truth; excluded from scoring.
    Ignored,
}

/// Greedy score-ordered matching of one image's detections.
///
/// `keep[g]` marks ground truth that counts (in-difficulty and not marked
/// ignore). Detections are visited in descending score (ties by input
/// order); each takes the highest-IoU unconsumed kept ground truth if that
/// IoU reaches the threshold (inclusive), otherwise it is `Ignored` when it
/// overlaps any non-kept ground truth at the threshold, otherwise a false
/// positive. Non-kept ground truth is never consumed: one ignore region
/// can absorb any number of detections.
pub fn match_detections(
    dets: &[ResultRecord],
    gts: &[VehicleGT],
    keep: &[bool],
    iou_threshold: f64,
) -> Vec<MatchOutcome> {
    assert_eq!(gts.len(), keep.len(), "keep flags must align with ground truth");
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let mut consumed = vec![false; gts.len()];
    let mut outcomes = vec![MatchOutcome::FalsePositive; dets.len()];
    for &d in &order {
        let mut best_gt: Option<usize> = None;
        let mut best_iou = 0.0;
        for (g, gt) in gts.iter().enumerate() {
            if !keep[g] || consumed[g] {
                continue;
            }
            let overlap = iou(&dets[d].box2d, &gt.box2d);
            if overlap > best_iou {
                best_iou = overlap;
                best_gt = Some(g);
            }
        }
        if let Some(g) = best_gt.filter(|_| best_iou >= iou_threshold) {
            consumed[g] = true;
            outcomes[d] = MatchOutcome::TruePositive { gt_index: g };
            continue;
        }
        let touches_ignored = gts
            .iter()
            .enumerate()
            .any(|(g, gt)| !keep[g] && iou(&dets[d].box2d, &gt.box2d) >= iou_threshold);
        outcomes[d] = if touches_ignored { MatchOutcome::Ignored } else { MatchOutcome::FalsePositive };
    }
    outcomes
}

/// Aggregated evaluation results.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    /// Interpolated average precision of the 2D detections.
    pub ap: f64,
    /// Average orientation similarity (same interpolation as `ap`).
    pub aos: f64,
    /// Average localization precision keyed by distance threshold.
    pub alp: BTreeMap<String, f64>,
    /// Fraction of parts (over matched pairs) within the pixel threshold.
    pub part_loc: f64,
    /// Fraction of parts (over matched pairs) with the correct visibility
    /// class.
    pub vis_acc: f64,
    /// Fraction of matched pairs with all template dimensions within
    /// tolerance.
    pub template_acc: f64,
    pub n_images: usize,
    /// Ground truth in the selected difficulty (recall denominator).
    pub n_gt: usize,
    /// Total detections evaluated (before ignore filtering).
    pub n_det: usize,
}

/// Map key for an ALP threshold: whole numbers render with one decimal
/// ("1.0"), anything else in full ("1.25").
pub fn alp_key(threshold: f64) -> String {
    if threshold.fract() == 0.0 {
        format!("{threshold:.1}")
    } else {
        format!("{threshold}")
    }
}

/// Mean over evenly spaced recall points of the best value achieved at or
/// beyond each recall. `curve` holds (recall, value) per rank, recall
/// nondecreasing.
fn interpolated_average(curve: &[(f64, f64)], n_points: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..n_points {
        let r = j as f64 / (n_points - 1) as f64;
        let mut best = 0.0f64;
        for &(recall, value) in curve {
            if recall >= r {
                best = best.max(value);
            }
        }
        acc += best;
    }
    acc / n_points as f64
}

struct RankedDetection {
    score: f64,
    image: usize,
    det_index: usize,
    is_tp: bool,
    /// Heading agreement in [0, 1] (0 for false positives).
    orientation_sim: f64,
    /// 3D center error in meters (infinite for false positives).
    center_dist: f64,
}

/// Evaluates per-image detection lists against per-image ground truth.
pub fn evaluate(
    dets: &[Vec<ResultRecord>],
    gts: &[Vec<VehicleGT>],
    opts: &EvalOptions,
) -> MetricsReport {
    assert_eq!(dets.len(), gts.len(), "detection and ground-truth image counts differ");
    let mut ranked: Vec<RankedDetection> = Vec::new();
    let mut n_gt_active = 0usize;
    let mut n_det = 0usize;
    let mut part_hits = 0usize;
    let mut part_total = 0usize;
    let mut vis_hits = 0usize;
    let mut vis_total = 0usize;
    let mut template_hits = 0usize;
    let mut template_total = 0usize;

    for (image, (im_dets, im_gts)) in dets.iter().zip(gts).enumerate() {
        n_det += im_dets.len();
        let keep: Vec<bool> =
            im_gts.iter().map(|gt| !gt.ignore && opts.difficulty.keeps(gt)).collect();
        n_gt_active += keep.iter().filter(|k| **k).count();
        let outcomes = match_detections(im_dets, im_gts, &keep, opts.iou_threshold);
        for (det_index, outcome) in outcomes.iter().enumerate() {
            let det = &im_dets[det_index];
            match outcome {
                MatchOutcome::Ignored => {}
                MatchOutcome::FalsePositive => {
                    ranked.push(RankedDetection {
                        score: det.score,
                        image,
                        det_index,
                        is_tp: false,
                        orientation_sim: 0.0,
                        center_dist: f64::INFINITY,
                    });
                }
                MatchOutcome::TruePositive { gt_index } => {
                    let gt = &im_gts[*gt_index];
                    let dyaw = normalize_angle(det.box3d.yaw - gt.box3d.yaw);
                    let orientation_sim = (1.0 + dyaw.cos()) / 2.0;
                    let dc = [
                        det.box3d.center[0] - gt.box3d.center[0],
                        det.box3d.center[1] - gt.box3d.center[1],
                        det.box3d.center[2] - gt.box3d.center[2],
                    ];
                    let center_dist = (dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2]).sqrt();
                    ranked.push(RankedDetection {
                        score: det.score,
                        image,
                        det_index,
                        is_tp: true,
                        orientation_sim,
                        center_dist,
                    });
                    // Pairwise rates over every matched pair, regardless of
                    // score: these judge the recovered structure, not the
                    // ranking.
                    if let Some(gt_parts) = &gt.parts2d {
                        let scale = opts.part_ref_height / gt.box2d.h;
                        for (p, q) in det.parts2d.iter().zip(gt_parts) {
                            let err = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                            if err * scale < opts.part_px_threshold {
                                part_hits += 1;
                            }
                            part_total += 1;
                        }
                    }
                    if let Some(gt_vis) = &gt.visibility {
                        for (pred, truth) in det.visibility.iter().zip(gt_vis) {
                            if pred == truth {
                                vis_hits += 1;
                            }
                            vis_total += 1;
                        }
                    }
                    let t = &det.box3d.template;
                    let g = &gt.box3d.template;
                    let ok = (t.w - g.w).abs() / g.w < opts.template_tolerance
                        && (t.h - g.h).abs() / g.h < opts.template_tolerance
                        && (t.l - g.l).abs() / g.l < opts.template_tolerance;
                    if ok {
                        template_hits += 1;
                    }
                    template_total += 1;
                }
            }
        }
    }

    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.image.cmp(&b.image))
            .then(a.det_index.cmp(&b.det_index))
    });

    let n_points = opts.interp.count();
    let (ap, aos, alp) = if n_gt_active == 0 {
        let alp =
            opts.alp_thresholds.iter().map(|t| (alp_key(*t), 0.0)).collect::<BTreeMap<_, _>>();
        (0.0, 0.0, alp)
    } else {
        let mut tp = 0.0f64;
        let mut fp = 0.0f64;
        let mut sim_sum = 0.0f64;
        let mut precision_curve = Vec::with_capacity(ranked.len());
        let mut aos_curve = Vec::with_capacity(ranked.len());
        for r in &ranked {
            if r.is_tp {
                tp += 1.0;
                sim_sum += r.orientation_sim;
            } else {
                fp += 1.0;
            }
            let recall = tp / n_gt_active as f64;
            precision_curve.push((recall, tp / (tp + fp)));
            aos_curve.push((recall, sim_sum / (tp + fp)));
        }
        let ap = interpolated_average(&precision_curve, n_points);
        let aos = interpolated_average(&aos_curve, n_points);
        let mut alp = BTreeMap::new();
        for &threshold in &opts.alp_thresholds {
            let mut tp = 0.0f64;
            let mut fp = 0.0f64;
            let mut loc_sum = 0.0f64;
            let mut curve = Vec::with_capacity(ranked.len());
            for r in &ranked {
                if r.is_tp {
                    tp += 1.0;
                    if r.center_dist < threshold {
                        loc_sum += 1.0;
                    }
                } else {
                    fp += 1.0;
                }
                curve.push((tp / n_gt_active as f64, loc_sum / (tp + fp)));
            }
            alp.insert(alp_key(threshold), interpolated_average(&curve, n_points));
        }
        (ap, aos, alp)
    };

    let rate = |hits: usize, total: usize| if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    MetricsReport {
        ap,
        aos,
        alp,
        part_loc: rate(part_hits, part_total),
        vis_acc: rate(vis_hits, vis_total),
        template_acc: rate(template_hits, template_total),
        n_images: dets.len(),
        n_gt: n_gt_active,
        n_det,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::Template3D;
    use crate::geom::{Box2D, Box3D};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gt_at(cx: f64, cy: f64, w: f64, h: f64) -> VehicleGT {
        VehicleGT {
            model_index: None,
            box2d: Box2D::new(cx, cy, w, h),
            box3d: Box3D {
                center: [cx / 50.0, 0.0, 20.0],
                yaw: 0.3,
                template: Template3D { w: 1.8, h: 1.5, l: 4.3 },
            },
            parts2d: None,
            parts3d: None,
            visibility: None,
            truncation: 0.0,
            occlusion: 0,
            alpha: 0.0,
            ignore: false,
        }
    }

    fn det_matching(gt: &VehicleGT, score: f64) -> ResultRecord {
        ResultRecord {
            box2d: gt.box2d,
            score,
            model_index: 0,
            box3d: gt.box3d,
            parts2d: vec![],
            visibility: vec![],
            parts3d: vec![],
            reproj_rmse: 0.0,
            converged: true,
        }
    }

    #[test]
    fn single_true_positive_scores_one() {
        let gt = gt_at(100.0, 100.0, 40.0, 30.0);
        let det = det_matching(&gt, 0.9);
        let report = evaluate(&[vec![det]], &[vec![gt]], &EvalOptions::default());
        assert!((report.ap - 1.0).abs() < 1e-12);
        assert!((report.aos - 1.0).abs() < 1e-12);
        assert!((report.alp["1.0"] - 1.0).abs() < 1e-12);
        assert!((report.alp["2.0"] - 1.0).abs() < 1e-12);
        assert_eq!(report.n_gt, 1);
        assert_eq!(report.n_det, 1);
    }

    #[test]
    fn missed_gt_halves_recall() {
        let gt_a = gt_at(100.0, 100.0, 40.0, 30.0);
        let gt_b = gt_at(300.0, 100.0, 40.0, 30.0);
        let det = det_matching(&gt_a, 0.9);
        let report = evaluate(&[vec![det]], &[vec![gt_a, gt_b]], &EvalOptions::default());
        // Precision 1 up to recall 0.5, nothing beyond: 6 of 11 points.
        assert!((report.ap - 6.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn false_positive_caps_precision() {
        let gt = gt_at(100.0, 100.0, 40.0, 30.0);
        let tp = det_matching(&gt, 0.8);
        let mut fp = det_matching(&gt, 0.9);
        fp.box2d = Box2D::new(400.0, 200.0, 40.0, 30.0);
        let report = evaluate(&[vec![tp, fp]], &[vec![gt]], &EvalOptions::default());
        // Best precision at full recall is 1/2.
        assert!((report.ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn higher_score_takes_the_ground_truth() {
        let gt = gt_at(100.0, 100.0, 40.0, 30.0);
        let strong = det_matching(&gt, 0.9);
        let weak = det_matching(&gt, 0.5);
        let outcomes =
            match_detections(&[weak, strong], &[gt], &[true], 0.7);
        assert_eq!(outcomes[1], MatchOutcome::TruePositive { gt_index: 0 });
        assert_eq!(outcomes[0], MatchOutcome::FalsePositive);
    }

    #[test]
    fn inclusive_threshold_matches_exact_iou() {
        let gt = gt_at(100.0, 100.0, 40.0, 30.0);
        // Shifted so IoU is exactly (40-10)/ (40+10) horizontal overlap:
        // widths equal; overlap w 30, union w 50 -> IoU = 0.6·...
        // use threshold equal to computed IoU instead.
        let mut det = det_matching(&gt, 0.9);
        det.box2d.cx += 10.0;
        let overlap = crate::geom::iou(&det.box2d, &gt.box2d);
        let outcomes = match_detections(&[det.clone()], &[gt.clone()], &[true], overlap);
        assert_eq!(outcomes[0], MatchOutcome::TruePositive { gt_index: 0 });
        let stricter = match_detections(&[det], &[gt], &[true], overlap + 1e-9);
        assert_eq!(stricter[0], MatchOutcome::FalsePositive);
    }

    #[test]
    fn ignored_gt_absorbs_detections_without_penalty() {
        let gt = gt_at(100.0, 100.0, 40.0, 30.0);
        let mut dont_care = gt_at(300.0, 100.0, 60.0, 40.0);
        dont_care.ignore = true;
        let tp = det_matching(&gt, 0.9);
        let on_ignored_a = det_matching(&dont_care, 0.8);
        let on_ignored_b = det_matching(&dont_care, 0.7);
        let report = evaluate(
            &[vec![tp, on_ignored_a, on_ignored_b]],
            &[vec![gt, dont_care]],
            &EvalOptions::default(),
        );
        assert!((report.ap - 1.0).abs() < 1e-12, "ignored dets must not act as FPs");
        assert_eq!(report.n_gt, 1);
    }

    #[test]
    fn orientation_error_lowers_aos_not_ap() {
        let gt = gt_at(100.0, 100.0, 40.0, 30.0);
        let mut det = det_matching(&gt, 0.9);
        det.box3d.yaw = gt.box3d.yaw + std::f64::consts::PI / 2.0;
        let report = evaluate(&[vec![det]], &[vec![gt]], &EvalOptions::default());
        assert!((report.ap - 1.0).abs() < 1e-12);
        assert!((report.aos - 0.5).abs() < 1e-12);
        assert!(report.aos <= report.ap);
    }

    #[test]
    fn alp_threshold_is_strict_and_monotone() {
        let gt = gt_at(100.0, 100.0, 40.0, 30.0);
        let mut det = det_matching(&gt, 0.9);
        det.box3d.center[2] += 1.0; // exactly 1 m off
        let report = evaluate(&[vec![det]], &[vec![gt]], &EvalOptions::default());
        assert!((report.alp["1.0"] - 0.0).abs() < 1e-12, "1.0 m error fails the 1 m bound");
        assert!((report.alp["2.0"] - 1.0).abs() < 1e-12);
        assert!(report.alp["2.0"] >= report.alp["1.0"]);
    }

    #[test]
    fn difficulty_buckets_filter_by_height_occlusion_truncation() {
        let mut gt = gt_at(100.0, 100.0, 40.0, 50.0);
        assert!(Difficulty::Easy.keeps(&gt));
        gt.box2d.h = 30.0;
        assert!(!Difficulty::Easy.keeps(&gt));
        assert!(Difficulty::Moderate.keeps(&gt));
        gt.occlusion = 2;
        assert!(!Difficulty::Moderate.keeps(&gt));
        assert!(Difficulty::Hard.keeps(&gt));
        gt.truncation = 0.6;
        assert!(!Difficulty::Hard.keeps(&gt));
        assert!(Difficulty::All.keeps(&gt));
        gt.box2d.h = 24.0;
        assert!(!Difficulty::Hard.keeps(&gt));
    }

    #[test]
    fn out_of_difficulty_gt_is_ignored_not_counted() {
        let gt = gt_at(100.0, 100.0, 40.0, 50.0);
        let mut hard_gt = gt_at(300.0, 100.0, 30.0, 20.0); // below height floor
        hard_gt.occlusion = 2;
        let det_on_easy = det_matching(&gt, 0.9);
        let det_on_hard = det_matching(&hard_gt, 0.8);
        let opts = EvalOptions { difficulty: Difficulty::Easy, ..Default::default() };
        let report = evaluate(&[vec![det_on_easy, det_on_hard]], &[vec![gt, hard_gt]], &opts);
        assert_eq!(report.n_gt, 1);
        assert!((report.ap - 1.0).abs() < 1e-12, "det on filtered gt is not a false positive");
    }

    #[test]
    fn alp_keys_format_whole_and_fractional() {
        assert_eq!(alp_key(1.0), "1.0");
        assert_eq!(alp_key(2.0), "2.0");
        assert_eq!(alp_key(1.5), "1.5");
        assert_eq!(alp_key(1.25), "1.25");
    }

    #[test]
    fn empty_inputs_are_all_zero() {
        let report = evaluate(&[vec![]], &[vec![]], &EvalOptions::default());
        assert_eq!(report.ap, 0.0);
        assert_eq!(report.aos, 0.0);
        assert_eq!(report.n_gt, 0);
    }

    // ------------------------------------------------------------------
    // Brute-force cross-check: recompute every curve point by rebuilding
    // the matching from scratch on each top-k prefix of the global score
    // ranking, instead of accumulating counts along one pass.
    // ------------------------------------------------------------------

    pub(crate) fn evaluate_by_prefix_rematch(
        dets: &[Vec<ResultRecord>],
        gts: &[Vec<VehicleGT>],
        opts: &EvalOptions,
    ) -> (f64, f64, BTreeMap<String, f64>) {
        // Global ranking identical to the implementation's tie rules.
        let mut ids: Vec<(usize, usize)> = Vec::new();
        for (im, im_dets) in dets.iter().enumerate() {
            for d in 0..im_dets.len() {
                ids.push((im, d));
            }
        }
        ids.sort_by(|a, b| {
            dets[b.0][b.1]
                .score
                .partial_cmp(&dets[a.0][a.1].score)
                .unwrap()
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });
        let keeps: Vec<Vec<bool>> = gts
            .iter()
            .map(|im| im.iter().map(|g| !g.ignore && opts.difficulty.keeps(g)).collect())
            .collect();
        let n_gt: usize = keeps.iter().map(|k| k.iter().filter(|b| **b).count()).sum();
        if n_gt == 0 {
            let alp = opts.alp_thresholds.iter().map(|t| (alp_key(*t), 0.0)).collect();
            return (0.0, 0.0, alp);
        }
        // One curve row per prefix length.
        let mut rows: Vec<(f64, f64, f64, Vec<f64>)> = Vec::new(); // recall, prec, aos, alp values
        for k in 1..=ids.len() {
            let prefix = &ids[..k];
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut sim = 0.0;
            let mut loc = vec![0.0; opts.alp_thresholds.len()];
            for (im, (im_dets, im_gts)) in dets.iter().zip(gts).enumerate() {
                let chosen: Vec<ResultRecord> = prefix
                    .iter()
                    .filter(|(i, _)| *i == im)
                    .map(|(_, d)| im_dets[*d].clone())
                    .collect();
                let outcomes = match_detections(&chosen, im_gts, &keeps[im], opts.iou_threshold);
                for (ci, outcome) in outcomes.iter().enumerate() {
                    match outcome {
                        MatchOutcome::Ignored => {}
                        MatchOutcome::FalsePositive => fp += 1.0,
                        MatchOutcome::TruePositive { gt_index } => {
                            tp += 1.0;
                            let gt = &im_gts[*gt_index];
                            let det = &chosen[ci];
                            let dyaw = normalize_angle(det.box3d.yaw - gt.box3d.yaw);
                            sim += (1.0 + dyaw.cos()) / 2.0;
                            let dc = [
                                det.box3d.center[0] - gt.box3d.center[0],
                                det.box3d.center[1] - gt.box3d.center[1],
                                det.box3d.center[2] - gt.box3d.center[2],
                            ];
                            let dist = (dc[0] * dc[0] + dc[1] * dc[1] + dc[2] * dc[2]).sqrt();
                            for (ti, thr) in opts.alp_thresholds.iter().enumerate() {
                                if dist < *thr {
                                    loc[ti] += 1.0;
                                }
                            }
                        }
                    }
                }
            }
            if tp + fp == 0.0 {
                continue; // prefix was all ignored
            }
            let recall = tp / n_gt as f64;
            rows.push((
                recall,
                tp / (tp + fp),
                sim / (tp + fp),
                loc.iter().map(|l| l / (tp + fp)).collect(),
            ));
        }
        let n_points = opts.interp.count();
        let average = |pick: &dyn Fn(&(f64, f64, f64, Vec<f64>)) -> f64| {
            let mut acc = 0.0;
            for j in 0..n_points {
                let r = j as f64 / (n_points - 1) as f64;
                let mut best = 0.0f64;
                for row in &rows {
                    if row.0 >= r {
                        best = best.max(pick(row));
                    }
                }
                acc += best;
            }
            acc / n_points as f64
        };
        let ap = average(&|row| row.1);
        let aos = average(&|row| row.2);
        let mut alp = BTreeMap::new();
        for (ti, thr) in opts.alp_thresholds.iter().enumerate() {
            alp.insert(alp_key(*thr), average(&|row| row.3[ti]));
        }
        (ap, aos, alp)
    }

    /// Random evaluation instance with score ties, ignored regions, and a
    /// mix of good, misplaced, and spurious detections.
    pub(crate) fn random_instance(
        rng: &mut ChaCha8Rng,
    ) -> (Vec<Vec<ResultRecord>>, Vec<Vec<VehicleGT>>) {
        let n_images = rng.gen_range(1..=3);
        let mut dets = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..n_images {
            let n_gt = rng.gen_range(0..=4);
            let mut im_gts: Vec<VehicleGT> = Vec::new();
            for g in 0..n_gt {
                let mut gt = gt_at(
                    60.0 + 120.0 * g as f64 + rng.gen_range(-10.0..10.0),
                    80.0 + rng.gen_range(-20.0..20.0),
                    rng.gen_range(30.0..70.0),
                    rng.gen_range(22.0..60.0),
                );
                gt.box3d.yaw = rng.gen_range(-3.1..3.1);
                gt.occlusion = rng.gen_range(0..=2);
                gt.truncation = rng.gen_range(0.0..0.6);
                gt.ignore = rng.gen_bool(0.2);
                im_gts.push(gt);
            }
            let mut im_dets: Vec<ResultRecord> = Vec::new();
            for gt in &im_gts {
                // Possibly multiple detections per ground truth.
                for _ in 0..rng.gen_range(0..=2) {
                    let mut det = det_matching(gt, (rng.gen_range(1..=9) as f64) / 10.0);
                    det.box2d.cx += rng.gen_range(-6.0..6.0);
                    det.box2d.cy += rng.gen_range(-5.0..5.0);
                    det.box2d.w *= rng.gen_range(0.85..1.15);
                    det.box3d.yaw += rng.gen_range(-0.6..0.6);
                    det.box3d.center[2] += rng.gen_range(-2.5..2.5);
                    im_dets.push(det);
                }
            }
            for _ in 0..rng.gen_range(0..=2) {
                // Pure clutter.
                let gt = gt_at(
                    rng.gen_range(50.0..600.0),
                    rng.gen_range(50.0..300.0),
                    rng.gen_range(20.0..60.0),
                    rng.gen_range(20.0..50.0),
                );
                im_dets.push(det_matching(&gt, (rng.gen_range(1..=9) as f64) / 10.0));
            }
            dets.push(im_dets);
            gts.push(im_gts);
        }
        (dets, gts)
    }

    #[test]
    fn curve_metrics_match_prefix_rematch_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..25 {
            let (dets, gts) = random_instance(&mut rng);
            for difficulty in [Difficulty::All, Difficulty::Moderate] {
                for interp in [InterpPoints::Eleven, InterpPoints::FortyOne] {
                    let opts = EvalOptions { difficulty, interp, ..Default::default() };
                    let report = evaluate(&dets, &gts, &opts);
                    let (ap, aos, alp) = evaluate_by_prefix_rematch(&dets, &gts, &opts);
                    assert!(
                        (report.ap - ap).abs() < 1e-9,
                        "case {case}: ap {} vs oracle {ap}",
                        report.ap
                    );
                    assert!(
                        (report.aos - aos).abs() < 1e-9,
                        "case {case}: aos {} vs oracle {aos}",
                        report.aos
                    );
                    for (key, value) in &alp {
                        assert!(
                            (report.alp[key] - value).abs() < 1e-9,
                            "case {case}: alp[{key}] {} vs oracle {value}",
                            report.alp[key]
                        );
                    }
                    // Structural identities.
                    assert!(report.aos <= report.ap + 1e-12);
                    assert!(report.alp["2.0"] + 1e-12 >= report.alp["1.0"]);
                }
            }
        }
    }
}
