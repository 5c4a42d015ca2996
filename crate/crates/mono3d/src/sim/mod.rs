//! Synthetic data backbone: seeded scene generation, ideal detection
//! records derived from ground truth, noise injection, record files, and
//! KITTI ingestion.
//!
//! Everything here is deterministic given its seed, so closed-loop checks
//! (scene → annotate → records → inference → metrics) reproduce exactly
//! across runs and machines.

pub mod kitti;
pub mod records;
pub mod synthetic;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{Scene, VehicleGT, WeakAnnotation};
use crate::bank::ShapeBank;
use crate::codec::{encode_template_similarity, Visibility};
use crate::geom::{iou, Box2D, Box3D, CameraIntrinsics, Pose};
use crate::infer::DetectionRecord;

/// Scene sampling parameters. The camera and bank are passed to
/// [`generate_scene`] alongside this.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_vehicles_min: usize,
    pub n_vehicles_max: usize,
    /// Depth range in meters (camera +z).
    pub depth_min: f64,
    pub depth_max: f64,
    /// Vehicles sit on a ground plane this far below the camera center.
    pub camera_height: f64,
    /// Lateral positions stay within this fraction of the view frustum at
    /// the sampled depth, keeping vehicles mostly on-screen.
    pub lateral_margin: f64,
    /// Yaw is drawn uniformly from this range (radians).
    pub yaw_min: f64,
    pub yaw_max: f64,
    /// Minimum ground-plane gap between vehicle footprints (meters).
    pub min_clearance: f64,
    /// Reject a placement when its projected 2D box overlaps an accepted
    /// vehicle above this IoU; keeps distinct vehicles separable under
    /// standard suppression thresholds.
    pub max_box_iou: f64,
    /// Placement attempts per vehicle before giving up on it.
    pub max_attempts: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_vehicles_min: 3,
            n_vehicles_max: 6,
            depth_min: 5.0,
            depth_max: 50.0,
            camera_height: 1.65,
            lateral_margin: 0.85,
            yaw_min: -std::f64::consts::PI,
            yaw_max: std::f64::consts::PI,
            min_clearance: 0.3,
            max_box_iou: 0.45,
            max_attempts: 1000,
        }
    }
}

/// Perturbation magnitudes for detection records; all default to zero
/// (identity).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Gaussian pixel noise on each part coordinate.
    pub part_sigma: f64,
    /// Gaussian pixel noise on box center and size.
    pub box_sigma: f64,
    /// Gaussian noise on the log dimension ratios.
    pub template_sigma: f64,
    /// Per-part probability of replacing the visibility scores with a
    /// uniformly resampled one-hot class (the original class can be drawn
    /// again).
    pub vis_flip_prob: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { part_sigma: 0.0, box_sigma: 0.0, template_sigma: 0.0, vis_flip_prob: 0.0 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.part_sigma < 0.0 || self.box_sigma < 0.0 || self.template_sigma < 0.0 {
            return Err(SimError::InvalidNoise("sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.vis_flip_prob) {
            return Err(SimError::InvalidNoise("vis_flip_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),
    #[error("ground truth {index} carries no part annotations; records need annotator output")]
    MissingParts { index: usize },
}

/// Oriented rectangle on the ground plane (vehicle footprint).
struct Footprint {
    cx: f64,
    cz: f64,
    half_l: f64,
    half_w: f64,
    yaw: f64,
}

impl Footprint {
    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.yaw.sin_cos();
        // Object +x (length) and +z (width) directions on the xz plane.
        // R_yaw maps object x to (c, -s) and object z to (s, c) in (x, z).
        [[c, -s], [s, c]]
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        let [ax, az] = self.axes();
        let mut out = [[0.0; 2]; 4];
        for (i, (sl, sw)) in
            [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)].into_iter().enumerate()
        {
            out[i] = [
                self.cx + sl * self.half_l * ax[0] + sw * self.half_w * az[0],
                self.cz + sl * self.half_l * ax[1] + sw * self.half_w * az[1],
            ];
        }
        out
    }
}

/// Separating-axis overlap test for two oriented ground rectangles.
fn footprints_overlap(a: &Footprint, b: &Footprint) -> bool {
    let corners_a = a.corners();
    let corners_b = b.corners();
    for axis in a.axes().into_iter().chain(b.axes()) {
        let project = |cs: &[[f64; 2]; 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in cs {
                let d = c[0] * axis[0] + c[1] * axis[1];
                lo = lo.min(d);
                hi = hi.max(d);
            }
            (lo, hi)
        };
        let (a_lo, a_hi) = project(&corners_a);
        let (b_lo, b_hi) = project(&corners_b);
        if a_hi < b_lo || b_hi < a_lo {
            return false;
        }
    }
    true
}

/// Projected 2D box of a vehicle's 3D bounding box corners; `None` when it
/// pokes behind the camera.
fn projected_box(camera: &CameraIntrinsics, pose: &Pose, t: &crate::bank::Template3D) -> Option<Box2D> {
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for sx in [-0.5, 0.5] {
        for sy in [-0.5, 0.5] {
            for sz in [-0.5, 0.5] {
                let p = crate::geom::transform_point(pose, [sx * t.l, sy * t.h, sz * t.w]);
                let uv = crate::geom::project_camera_point(camera, p).ok()?;
                min_u = min_u.min(uv[0]);
                max_u = max_u.max(uv[0]);
                min_v = min_v.min(uv[1]);
                max_v = max_v.max(uv[1]);
            }
        }
    }
    Some(Box2D::from_corners(min_u, min_v, max_u, max_v))
}

/// Samples a scene: vehicles drawn uniformly from the bank, placed on the
/// ground plane by rejection sampling so that no two 3D footprints touch
/// (with clearance) and no two projected boxes overlap beyond
/// `max_box_iou`. A vehicle whose placement cannot be found within
/// `max_attempts` is dropped with a warning, so the scene may end up
/// smaller than requested.
pub fn generate_scene(
    spec: &SceneSpec,
    bank: &ShapeBank,
    camera: &CameraIntrinsics,
) -> Result<Scene, SimError> {
    if spec.n_vehicles_min > spec.n_vehicles_max {
        return Err(SimError::InvalidSpec("n_vehicles_min exceeds n_vehicles_max".into()));
    }
    if !(spec.depth_min > 0.0 && spec.depth_max >= spec.depth_min) {
        return Err(SimError::InvalidSpec("depth range must be positive and ordered".into()));
    }
    if spec.yaw_max < spec.yaw_min {
        return Err(SimError::InvalidSpec("yaw range is reversed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = rng.gen_range(spec.n_vehicles_min..=spec.n_vehicles_max);
    let mut annotations: Vec<WeakAnnotation> = Vec::with_capacity(n);
    let mut footprints: Vec<Footprint> = Vec::new();
    let mut boxes: Vec<Box2D> = Vec::new();
    for vehicle in 0..n {
        let mut placed = false;
        for _ in 0..spec.max_attempts {
            let model = &bank.models[rng.gen_range(0..bank.models.len())];
            let template = model.template;
            let z = rng.gen_range(spec.depth_min..=spec.depth_max);
            let x_lo = (0.0 - camera.cx) / camera.fx * z * spec.lateral_margin;
            let x_hi = (camera.img_w as f64 - camera.cx) / camera.fx * z * spec.lateral_margin;
            let x = rng.gen_range(x_lo..=x_hi);
            let y = spec.camera_height - template.h / 2.0;
            let yaw = rng.gen_range(spec.yaw_min..=spec.yaw_max);
            let pose = Pose::new(yaw, [x, y, z]);
            let footprint = Footprint {
                cx: x,
                cz: z,
                half_l: template.l / 2.0 + spec.min_clearance / 2.0,
                half_w: template.w / 2.0 + spec.min_clearance / 2.0,
                yaw,
            };
            if footprints.iter().any(|f| footprints_overlap(f, &footprint)) {
                continue;
            }
            let Some(box2d) = projected_box(camera, &pose, &template) else { continue };
            if boxes.iter().any(|b| iou(b, &box2d) > spec.max_box_iou) {
                continue;
            }
            annotations.push(WeakAnnotation {
                box3d: Box3D { center: [x, y, z], yaw, template },
            });
            footprints.push(footprint);
            boxes.push(box2d);
            placed = true;
            break;
        }
        if !placed {
            log::warn!(
                "vehicle {vehicle}: no collision-free placement in {} attempts, dropping it",
                spec.max_attempts
            );
        }
    }
    Ok(Scene::build(bank, camera, &annotations))
}

/// Builds ideal detection records from annotator ground truth: score 1,
/// exact parts, one-hot visibility, and the exact template similarity
/// code. Running inference on these reproduces the ground truth.
pub fn gt_to_records(
    gts: &[VehicleGT],
    bank: &ShapeBank,
) -> Result<Vec<DetectionRecord>, SimError> {
    gts.iter()
        .enumerate()
        .map(|(index, gt)| {
            let parts2d = gt.parts2d.clone().ok_or(SimError::MissingParts { index })?;
            let visibility = gt.visibility.clone().ok_or(SimError::MissingParts { index })?;
            Ok(DetectionRecord {
                box2d: gt.box2d,
                score: 1.0,
                parts2d,
                vis_scores: visibility.iter().map(|v| v.one_hot()).collect(),
                template_sim: encode_template_similarity(&gt.box3d.template, bank),
            })
        })
        .collect()
}

/// Applies record noise. Deterministic for a given `(records, noise, seed)`
/// triple; zero noise returns the input bitwise.
pub fn perturb_records(
    recs: &[DetectionRecord],
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Vec<DetectionRecord>, SimError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |sigma: f64| Normal::new(0.0, sigma).expect("validated sigma");
    let mut out = Vec::with_capacity(recs.len());
    for rec in recs {
        let mut rec = rec.clone();
        if noise.part_sigma > 0.0 {
            let n = gauss(noise.part_sigma);
            for p in &mut rec.parts2d {
                p[0] += n.sample(&mut rng);
                p[1] += n.sample(&mut rng);
            }
        }
        if noise.box_sigma > 0.0 {
            let n = gauss(noise.box_sigma);
            rec.box2d.cx += n.sample(&mut rng);
            rec.box2d.cy += n.sample(&mut rng);
            // Sizes stay at least one pixel.
            rec.box2d.w = (rec.box2d.w + n.sample(&mut rng)).max(1.0);
            rec.box2d.h = (rec.box2d.h + n.sample(&mut rng)).max(1.0);
        }
        if noise.template_sigma > 0.0 {
            let n = gauss(noise.template_sigma);
            for row in &mut rec.template_sim.log_ratios {
                for v in row.iter_mut() {
                    *v += n.sample(&mut rng);
                }
            }
        }
        if noise.vis_flip_prob > 0.0 {
            for scores in &mut rec.vis_scores {
                if rng.gen_bool(noise.vis_flip_prob) {
                    let class = Visibility::from_class_index(rng.gen_range(0..Visibility::COUNT))
                        .expect("index in range");
                    *scores = class.one_hot();
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}
