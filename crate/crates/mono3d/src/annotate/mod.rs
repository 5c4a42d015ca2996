//! Semi-automatic ground-truth generation from weak 3D box annotations.
//!
//! A weak annotation is just a 3D box: center, heading, and outer
//! dimensions. From it this module selects the closest shape model in the
//! bank, instantiates the model's parts and visibility mesh at the
//! annotated size and pose, and derives everything a training record
//! needs: the 2D box, per-part image locations, per-part visibility
//! classes (computed by casting rays against every vehicle mesh in the
//! scene), 3D part locations, and truncation/occlusion metadata.

pub mod visibility;
pub mod zbuffer;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bank::{
    scale_mesh_to_template, scale_shape_to_template, ShapeBank, Template3D, VisibilityMesh,
};
use crate::codec::{Visibility, VisibilityVector};
use crate::geom::{
    normalize_angle, transform_point, Box2D, Box3D, CameraIntrinsics, GeomError, Point2, Point3,
    Pose, MIN_DEPTH,
};
use crate::proposal::clip_to_image;

pub use visibility::{nearest_hit, ray_triangle, Hit, OCCLUSION_EPSILON};
pub use zbuffer::{DepthBuffer, SurfaceSample, SUPERSAMPLE};

/// A coarse human-provided (or dataset-provided) 3D box annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakAnnotation {
    pub box3d: Box3D,
}

/// Options controlling ground-truth derivation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationOptions {
    /// Clip derived 2D boxes to the image the way dataset boxes are
    /// clipped. The unclipped extent still determines truncation.
    pub clip_box_to_image: bool,
}

impl Default for AnnotationOptions {
    fn default() -> Self {
        Self { clip_box_to_image: true }
    }
}

/// One vehicle instantiated in the camera frame.
#[derive(Debug, Clone)]
pub struct PlacedVehicle {
    /// Index of the selected bank model.
    pub model_index: usize,
    pub pose: Pose,
    pub template: Template3D,
    /// Part locations in the object frame, scaled to `template`.
    pub parts_object: Vec<Point3>,
    /// Part locations in the camera frame.
    pub parts_camera: Vec<Point3>,
    /// Visibility mesh in the camera frame.
    pub mesh_camera: VisibilityMesh,
}

/// A set of vehicles placed in front of one camera.
#[derive(Debug, Clone)]
pub struct Scene {
    pub camera: CameraIntrinsics,
    pub n_parts: usize,
    pub vehicles: Vec<PlacedVehicle>,
}

/// Complete per-vehicle ground truth derived from a weak annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleGT {
    /// Bank model the annotation matched; absent for ground truth imported
    /// from datasets that carry no shape association.
    pub model_index: Option<usize>,
    pub box2d: Box2D,
    pub box3d: Box3D,
    /// Per-part image locations (present for bank-derived ground truth).
    pub parts2d: Option<Vec<Point2>>,
    /// Per-part camera-frame locations.
    pub parts3d: Option<Vec<Point3>>,
    /// Per-part visibility classes.
    pub visibility: Option<VisibilityVector>,
    /// Fraction of the projected extent lost to the image border, in [0, 1].
    pub truncation: f64,
    /// Coarse occlusion level: 0 fully visible, 1 partly occluded,
    /// 2 largely occluded.
    pub occlusion: i32,
    /// Observation angle: heading measured around the viewing ray.
    pub alpha: f64,
    /// Evaluation should neither require nor penalize matching this entry.
    pub ignore: bool,
}

/// Picks the bank model whose template is nearest the annotated dimensions
/// (Euclidean distance over `(w, h, l)`, first winner on ties).
pub fn select_model(bank: &ShapeBank, template: &Template3D) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, model) in bank.models.iter().enumerate() {
        let d = (template.w - model.template.w).powi(2)
            + (template.h - model.template.h).powi(2)
            + (template.l - model.template.l).powi(2);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

impl Scene {
    /// Instantiates every annotation against the bank.
    pub fn build(
        bank: &ShapeBank,
        camera: &CameraIntrinsics,
        annotations: &[WeakAnnotation],
    ) -> Scene {
        let vehicles = annotations
            .iter()
            .map(|ann| {
                let model_index = select_model(bank, &ann.box3d.template);
                let model = &bank.models[model_index];
                let pose = Pose::new(ann.box3d.yaw, ann.box3d.center);
                let shape =
                    scale_shape_to_template(&model.parts, &model.template, &ann.box3d.template);
                let mesh =
                    scale_mesh_to_template(&model.mesh, &model.template, &ann.box3d.template);
                let parts_camera =
                    shape.points.iter().map(|&p| transform_point(&pose, p)).collect();
                let mesh_camera = VisibilityMesh {
                    vertices: mesh.vertices.iter().map(|&v| transform_point(&pose, v)).collect(),
                    faces: mesh.faces,
                };
                PlacedVehicle {
                    model_index,
                    pose,
                    template: ann.box3d.template,
                    parts_object: shape.points,
                    parts_camera,
                    mesh_camera,
                }
            })
            .collect();
        Scene { camera: *camera, n_parts: bank.n_parts, vehicles }
    }

    /// Rasterizes all vehicle meshes into a depth buffer (for the
    /// depth-buffer visibility path).
    pub fn depth_buffer(&self) -> DepthBuffer {
        let meshes: Vec<VisibilityMesh> =
            self.vehicles.iter().map(|v| v.mesh_camera.clone()).collect();
        DepthBuffer::rasterize(&self.camera, &meshes)
    }
}

/// Classifies a projected part given the blocking surface the scene put in
/// front of it (if any). Shared by the ray-casting and depth-buffer paths.
fn classify(
    blocker: Option<(usize, usize)>,
    vehicle: usize,
    part_label: usize,
) -> Visibility {
    match blocker {
        None => Visibility::Visible,
        Some((blocking_vehicle, face_label)) => {
            if blocking_vehicle == vehicle {
                if face_label == part_label {
                    // The nearest surface is the part's own patch; nothing
                    // actually stands in front of it.
                    Visibility::Visible
                } else {
                    Visibility::SelfOccluded
                }
            } else {
                Visibility::Occluded
            }
        }
    }
}

/// Per-part visibility for one vehicle, by ray casting against every mesh
/// in the scene.
///
/// Truncation wins over occlusion: a part projecting outside the image is
/// `Truncated` no matter what sits in front of it. Parts at non-positive
/// depth are an error.
pub fn compute_part_visibility(scene: &Scene, vehicle: usize) -> Result<VisibilityVector, GeomError> {
    let v = &scene.vehicles[vehicle];
    let mut out = Vec::with_capacity(v.parts_camera.len());
    for (part_idx, &p) in v.parts_camera.iter().enumerate() {
        if p[2] <= MIN_DEPTH {
            return Err(GeomError::DegenerateDepth { index: part_idx, z: p[2] });
        }
        let u = scene.camera.fx * p[0] / p[2] + scene.camera.cx;
        let vv = scene.camera.fy * p[1] / p[2] + scene.camera.cy;
        if !scene.camera.contains([u, vv]) {
            out.push(Visibility::Truncated);
            continue;
        }
        let pvec = Vector3::from(p);
        let dist = pvec.norm();
        let dir = pvec / dist;
        // Nearest hit over all meshes that is meaningfully in front of the
        // part.
        let mut blocker: Option<(f64, usize, usize)> = None;
        for (other_idx, other) in scene.vehicles.iter().enumerate() {
            if let Some(hit) = nearest_hit(Vector3::zeros(), dir, &other.mesh_camera) {
                if hit.distance < dist - OCCLUSION_EPSILON
                    && blocker.map_or(true, |(d, _, _)| hit.distance < d)
                {
                    let label = other.mesh_camera.faces[hit.face].part_label;
                    blocker = Some((hit.distance, other_idx, label));
                }
            }
        }
        out.push(classify(blocker.map(|(_, vi, l)| (vi, l)), vehicle, part_idx + 1));
    }
    Ok(out)
}

/// Per-part visibility for one vehicle using a pre-rasterized depth buffer.
///
/// Independent of [`compute_part_visibility`] by construction: occlusion is
/// judged by rendered depth along the optical axis at the part's pixel
/// rather than by exact ray distance, so surfaces within the margin band
/// of the part may classify differently between the two.
pub fn compute_part_visibility_zbuffer(
    scene: &Scene,
    buffer: &DepthBuffer,
    vehicle: usize,
) -> Result<VisibilityVector, GeomError> {
    let v = &scene.vehicles[vehicle];
    let mut out = Vec::with_capacity(v.parts_camera.len());
    for (part_idx, &p) in v.parts_camera.iter().enumerate() {
        if p[2] <= MIN_DEPTH {
            return Err(GeomError::DegenerateDepth { index: part_idx, z: p[2] });
        }
        let u = scene.camera.fx * p[0] / p[2] + scene.camera.cx;
        let vv = scene.camera.fy * p[1] / p[2] + scene.camera.cy;
        if !scene.camera.contains([u, vv]) {
            out.push(Visibility::Truncated);
            continue;
        }
        let blocker = buffer
            .sample(u, vv)
            .filter(|s| s.depth < p[2] - OCCLUSION_EPSILON)
            .map(|s| (s.vehicle, s.part_label));
        out.push(classify(blocker, vehicle, part_idx + 1));
    }
    Ok(out)
}

/// Derives full ground truth for every annotated vehicle in the scene.
///
/// Vehicles whose mesh reaches behind the camera, or whose projection
/// misses the image entirely, are skipped with a warning: neither has a
/// meaningful 2D box.
pub fn generate_ground_truth(
    scene: &Scene,
    opts: &AnnotationOptions,
) -> Result<Vec<VehicleGT>, GeomError> {
    let mut out = Vec::with_capacity(scene.vehicles.len());
    for (idx, v) in scene.vehicles.iter().enumerate() {
        if let Some(bad) = v.mesh_camera.vertices.iter().find(|p| p[2] <= MIN_DEPTH) {
            log::warn!(
                "skipping vehicle {idx}: mesh reaches depth {:.3} behind the camera",
                bad[2]
            );
            continue;
        }
        // Tight projected extent of the visibility mesh.
        let mut min_u = f64::INFINITY;
        let mut max_u = f64::NEG_INFINITY;
        let mut min_v = f64::INFINITY;
        let mut max_v = f64::NEG_INFINITY;
        for p in &v.mesh_camera.vertices {
            let u = scene.camera.fx * p[0] / p[2] + scene.camera.cx;
            let vv = scene.camera.fy * p[1] / p[2] + scene.camera.cy;
            min_u = min_u.min(u);
            max_u = max_u.max(u);
            min_v = min_v.min(vv);
            max_v = max_v.max(vv);
        }
        let raw = Box2D::from_corners(min_u, min_v, max_u, max_v);
        let w_limit = scene.camera.img_w as f64;
        let h_limit = scene.camera.img_h as f64;
        let visible_w = max_u.min(w_limit) - min_u.max(0.0);
        let visible_h = max_v.min(h_limit) - min_v.max(0.0);
        if visible_w <= 0.0 || visible_h <= 0.0 {
            log::warn!("skipping vehicle {idx}: projection falls entirely outside the image");
            continue;
        }
        let truncation = 1.0 - (visible_w * visible_h) / (raw.w * raw.h);
        let box2d = if opts.clip_box_to_image { clip_to_image(&raw, &scene.camera) } else { raw };

        let vis = compute_part_visibility(scene, idx)?;
        let occluded = vis.iter().filter(|c| **c == Visibility::Occluded).count();
        let occ_frac = occluded as f64 / vis.len().max(1) as f64;
        let occlusion = if occluded == 0 {
            0
        } else if occ_frac <= 0.5 {
            1
        } else {
            2
        };
        let parts2d: Vec<Point2> = v
            .parts_camera
            .iter()
            .map(|p| {
                [
                    scene.camera.fx * p[0] / p[2] + scene.camera.cx,
                    scene.camera.fy * p[1] / p[2] + scene.camera.cy,
                ]
            })
            .collect();
        let alpha = normalize_angle(v.pose.yaw - v.pose.t[0].atan2(v.pose.t[2]));
        out.push(VehicleGT {
            model_index: Some(v.model_index),
            box2d,
            box3d: Box3D { center: v.pose.t, yaw: v.pose.yaw, template: v.template },
            parts2d: Some(parts2d),
            parts3d: Some(v.parts_camera.clone()),
            visibility: Some(vis),
            truncation,
            occlusion,
            alpha,
            ignore: false,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{BankModel, MeshFace, Shape3D};

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics { fx: 700.0, fy: 700.0, cx: 320.0, cy: 240.0, img_w: 640, img_h: 480 }
    }

    /// A bank with one cube "vehicle": two parts, front face labeled 1,
    /// everything else labeled 2.
    fn cube_bank() -> ShapeBank {
        let mut vertices = Vec::new();
        for dz in [-0.5, 0.5] {
            for dy in [-0.5, 0.5] {
                for dx in [-0.5, 0.5] {
                    vertices.push([dx, dy, dz]);
                }
            }
        }
        let quads: [([usize; 4], usize); 6] = [
            ([1, 3, 7, 5], 1), // x = +0.5 (front in object coords)
            ([0, 2, 6, 4], 2), // x = -0.5
            ([0, 1, 3, 2], 2), // z = -0.5
            ([4, 5, 7, 6], 2), // z = +0.5
            ([0, 1, 5, 4], 2), // y = -0.5
            ([2, 3, 7, 6], 2), // y = +0.5
        ];
        let faces: Vec<MeshFace> = quads
            .iter()
            .flat_map(|(q, label)| {
                [
                    MeshFace { vertices: [q[0], q[1], q[2]], part_label: *label },
                    MeshFace { vertices: [q[0], q[2], q[3]], part_label: *label },
                ]
            })
            .collect();
        let model = BankModel {
            id: "cube".into(),
            template: Template3D { w: 1.0, h: 1.0, l: 1.0 },
            // Part 1 just inside the +x face, part 2 just inside the -x face.
            parts: Shape3D { points: vec![[0.49, 0.0, 0.0], [-0.49, 0.0, 0.0]] },
            mesh: VisibilityMesh { vertices, faces },
        };
        ShapeBank { n_parts: 2, models: vec![model] }
    }

    fn annotation(center: Point3, yaw: f64) -> WeakAnnotation {
        WeakAnnotation {
            box3d: Box3D { center, yaw, template: Template3D { w: 1.0, h: 1.0, l: 1.0 } },
        }
    }

    #[test]
    fn lone_cube_faces_camera_parts_classified() {
        // Yaw pi/2 turns +x (part 1) toward the camera.
        let scene = Scene::build(
            &cube_bank(),
            &camera(),
            &[annotation([0.0, 0.0, 10.0], std::f64::consts::FRAC_PI_2)],
        );
        let vis = compute_part_visibility(&scene, 0).unwrap();
        // Part 1 sits behind its own face (label 1): visible. Part 2 is on
        // the far side behind faces labeled 1 and 2: the nearest blocker is
        // the near face labeled 1, which is not part 2's label.
        assert_eq!(vis, vec![Visibility::Visible, Visibility::SelfOccluded]);
    }

    #[test]
    fn own_face_label_match_keeps_part_visible() {
        // Yaw -pi/2 turns -x (part 2, faces labeled 2) toward the camera.
        let scene = Scene::build(
            &cube_bank(),
            &camera(),
            &[annotation([0.0, 0.0, 10.0], -std::f64::consts::FRAC_PI_2)],
        );
        let vis = compute_part_visibility(&scene, 0).unwrap();
        assert_eq!(vis, vec![Visibility::SelfOccluded, Visibility::Visible]);
    }

    #[test]
    fn second_vehicle_in_front_occludes() {
        let scene = Scene::build(
            &cube_bank(),
            &camera(),
            &[
                annotation([0.0, 0.0, 10.0], std::f64::consts::FRAC_PI_2),
                annotation([0.0, 0.0, 5.0], std::f64::consts::FRAC_PI_2),
            ],
        );
        // Both rear-cube parts sit behind the front cube; the nearest
        // blocking surface belongs to the other vehicle, so both parts are
        // externally occluded (the rear part would be self-occluded in an
        // empty scene, but what actually covers it is the front cube).
        let vis = compute_part_visibility(&scene, 0).unwrap();
        assert_eq!(vis, vec![Visibility::Occluded, Visibility::Occluded]);
        // The blocking vehicle itself is unobstructed.
        let vis_front = compute_part_visibility(&scene, 1).unwrap();
        assert_eq!(vis_front, vec![Visibility::Visible, Visibility::SelfOccluded]);
    }

    #[test]
    fn out_of_image_projection_is_truncated_even_when_occluded() {
        // Cube far to the left, projecting outside the image, with another
        // cube directly in front of it.
        let scene = Scene::build(
            &cube_bank(),
            &camera(),
            &[
                annotation([-8.0, 0.0, 10.0], std::f64::consts::FRAC_PI_2),
                annotation([-4.0, 0.0, 5.0], std::f64::consts::FRAC_PI_2),
            ],
        );
        let vis = compute_part_visibility(&scene, 0).unwrap();
        assert_eq!(vis[0], Visibility::Truncated);
        assert_eq!(vis[1], Visibility::Truncated);
    }

    #[test]
    fn part_behind_camera_is_an_error() {
        let scene = Scene::build(&cube_bank(), &camera(), &[annotation([0.0, 0.0, -3.0], 0.0)]);
        assert!(matches!(
            compute_part_visibility(&scene, 0),
            Err(GeomError::DegenerateDepth { .. })
        ));
    }

    #[test]
    fn epsilon_margin_is_strict() {
        // A surface a touch outside the margin in front of the part must
        // not block it; one a touch inside must. The scene is assembled by
        // hand: one "vehicle" carrying a single on-axis part (with a stub
        // mesh far behind everything), one screen quad at a controlled
        // depth.
        let part = [0.0, 0.0, 10.0];
        let stub_mesh = VisibilityMesh {
            vertices: vec![[0.0, -0.1, 90.0], [0.1, 0.1, 90.0], [-0.1, 0.1, 90.0]],
            faces: vec![MeshFace { vertices: [0, 1, 2], part_label: 1 }],
        };
        let screen_at = |z: f64| VisibilityMesh {
            vertices: vec![[-1.0, -1.0, z], [1.0, -1.0, z], [1.0, 1.0, z], [-1.0, 1.0, z]],
            faces: vec![
                MeshFace { vertices: [0, 1, 2], part_label: 1 },
                MeshFace { vertices: [0, 2, 3], part_label: 1 },
            ],
        };
        let build = |screen_z: f64| {
            let holder = PlacedVehicle {
                model_index: 0,
                pose: Pose::new(0.0, [0.0, 0.0, 0.0]),
                template: Template3D { w: 1.0, h: 1.0, l: 1.0 },
                parts_object: vec![part],
                parts_camera: vec![part],
                mesh_camera: stub_mesh.clone(),
            };
            let screen = PlacedVehicle {
                model_index: 0,
                pose: Pose::new(0.0, [0.0, 0.0, 0.0]),
                template: Template3D { w: 1.0, h: 1.0, l: 1.0 },
                parts_object: vec![[0.0, 0.0, screen_z]],
                parts_camera: vec![[0.0, 0.0, screen_z]],
                mesh_camera: screen_at(screen_z),
            };
            Scene { camera: camera(), n_parts: 1, vehicles: vec![holder, screen] }
        };
        // The part is on the optical axis, so ray distance equals depth.
        let slack = 1e-6;
        let outside = build(part[2] - OCCLUSION_EPSILON + slack);
        assert_eq!(
            compute_part_visibility(&outside, 0).unwrap(),
            vec![Visibility::Visible],
            "surface outside the margin must not block"
        );
        let inside = build(part[2] - OCCLUSION_EPSILON - slack);
        assert_eq!(
            compute_part_visibility(&inside, 0).unwrap(),
            vec![Visibility::Occluded],
            "surface inside the margin must block"
        );
    }

    #[test]
    fn ground_truth_box_and_truncation() {
        let scene = Scene::build(&cube_bank(), &camera(), &[annotation([0.0, 0.0, 10.0], 0.0)]);
        let gts = generate_ground_truth(&scene, &AnnotationOptions::default()).unwrap();
        assert_eq!(gts.len(), 1);
        let gt = &gts[0];
        // Cube spans [-0.5, 0.5]^3 at z in [9.5, 10.5]: widest at the near
        // face, u in 320 +- 700*0.5/9.5.
        let expect_half_w = 700.0 * 0.5 / 9.5;
        assert!((gt.box2d.w - 2.0 * expect_half_w).abs() < 1e-9);
        assert!((gt.box2d.cx - 320.0).abs() < 1e-9);
        assert_eq!(gt.truncation, 0.0);
        assert_eq!(gt.occlusion, 0);
        assert_eq!(gt.model_index, Some(0));
        assert!((gt.alpha - gt.box3d.yaw).abs() < 1e-12, "straight ahead: alpha == yaw");
        let parts2d = gt.parts2d.as_ref().unwrap();
        assert_eq!(parts2d.len(), 2);
    }

    #[test]
    fn truncated_vehicle_reports_fraction_and_clipped_box() {
        // Place the cube so its projected center sits exactly on the left
        // border: roughly half the extent is lost.
        let z = 10.0;
        let x = -320.0 * z / 700.0;
        let scene = Scene::build(&cube_bank(), &camera(), &[annotation([x, 0.0, z], 0.0)]);
        let gts = generate_ground_truth(&scene, &AnnotationOptions::default()).unwrap();
        let gt = &gts[0];
        assert!(gt.truncation > 0.3 && gt.truncation < 0.7, "truncation {}", gt.truncation);
        assert!(gt.box2d.cx - gt.box2d.w / 2.0 >= 0.0, "clipped to image");
    }

    #[test]
    fn behind_camera_vehicle_is_skipped() {
        let scene = Scene::build(
            &cube_bank(),
            &camera(),
            &[annotation([0.0, 0.0, -5.0], 0.0), annotation([0.0, 0.0, 10.0], 0.0)],
        );
        let gts = generate_ground_truth(&scene, &AnnotationOptions::default()).unwrap();
        assert_eq!(gts.len(), 1);
        assert!((gts[0].box3d.center[2] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn fully_offscreen_vehicle_is_skipped() {
        let scene = Scene::build(&cube_bank(), &camera(), &[annotation([-50.0, 0.0, 10.0], 0.0)]);
        let gts = generate_ground_truth(&scene, &AnnotationOptions::default()).unwrap();
        assert!(gts.is_empty());
    }

    #[test]
    fn model_selection_prefers_nearest_and_breaks_ties_low() {
        let mut bank = cube_bank();
        let mut second = bank.models[0].clone();
        second.id = "cube2".into();
        second.template = Template3D { w: 2.0, h: 1.0, l: 1.0 };
        bank.models.push(second);
        let near_first = Template3D { w: 1.2, h: 1.0, l: 1.0 };
        assert_eq!(select_model(&bank, &near_first), 0);
        let near_second = Template3D { w: 1.8, h: 1.0, l: 1.0 };
        assert_eq!(select_model(&bank, &near_second), 1);
        // Equidistant: first wins.
        let tie = Template3D { w: 1.5, h: 1.0, l: 1.0 };
        assert_eq!(select_model(&bank, &tie), 0);
    }

    #[test]
    fn zbuffer_path_agrees_on_clean_configurations() {
        let scene = Scene::build(
            &cube_bank(),
            &camera(),
            &[
                annotation([0.0, 0.0, 10.0], std::f64::consts::FRAC_PI_2),
                annotation([0.0, 0.0, 5.0], std::f64::consts::FRAC_PI_2),
                annotation([3.0, 0.0, 12.0], -std::f64::consts::FRAC_PI_2),
            ],
        );
        let buffer = scene.depth_buffer();
        for vehicle in 0..scene.vehicles.len() {
            let ray = compute_part_visibility(&scene, vehicle).unwrap();
            let zb = compute_part_visibility_zbuffer(&scene, &buffer, vehicle).unwrap();
            assert_eq!(ray, zb, "vehicle {vehicle}");
        }
    }
}
