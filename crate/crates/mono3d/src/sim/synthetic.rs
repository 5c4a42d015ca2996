//! Built-in parametric vehicle bank: four body styles sharing one 36-part
//! layout, each with a labeled low-poly occlusion mesh, plus a camera with
//! KITTI-like intrinsics.
//!
//! Geometry is authored as fractions of the template dimensions in the
//! object frame (+x heading, +y down, +z vehicle-left), so every model is
//! exactly as wide/tall/long as its template says. Cabin proportions vary
//! per body style; everything else is shared, which keeps the part
//! semantics identical across models.

use crate::bank::{BankModel, MeshFace, Shape3D, ShapeBank, Template3D, VisibilityMesh};
use crate::geom::{CameraIntrinsics, Point3};

/// Canonical ordering of the 36 tracked parts. Index `i` corresponds to
/// 1-based mesh face label `i + 1`.
pub const PART_NAMES: [&str; 36] = [
    "wheel_front_left",
    "wheel_front_right",
    "wheel_rear_left",
    "wheel_rear_right",
    "headlight_left",
    "headlight_right",
    "taillight_left",
    "taillight_right",
    "bumper_front",
    "bumper_rear",
    "mirror_left",
    "mirror_right",
    "windshield_bottom_left",
    "windshield_bottom_right",
    "roof_front_left",
    "roof_front_right",
    "roof_rear_left",
    "roof_rear_right",
    "rear_window_bottom_left",
    "rear_window_bottom_right",
    "door_handle_front_left",
    "door_handle_front_right",
    "door_handle_rear_left",
    "door_handle_rear_right",
    "plate_front",
    "plate_rear",
    "grille_center",
    "hood_center",
    "trunk_center",
    "roof_center",
    "antenna_base",
    "fog_light_left",
    "fog_light_right",
    "fuel_cap_left",
    "rocker_left",
    "rocker_right",
];

/// Cabin silhouette of one body style, as x-fractions of the length
/// (positive toward the nose) and the beltline y-fraction of the height
/// (negative is up; the body box spans from the beltline down to the
/// floor, the cabin rises above it).
#[derive(Debug, Clone, Copy)]
struct CarStyle {
    windshield_base_x: f64,
    roof_front_x: f64,
    roof_rear_x: f64,
    rear_window_base_x: f64,
    belt_y: f64,
}

const SEDAN: CarStyle = CarStyle {
    windshield_base_x: 0.12,
    roof_front_x: 0.02,
    roof_rear_x: -0.24,
    rear_window_base_x: -0.36,
    belt_y: -0.10,
};

const HATCHBACK: CarStyle = CarStyle {
    windshield_base_x: 0.15,
    roof_front_x: 0.03,
    roof_rear_x: -0.32,
    rear_window_base_x: -0.42,
    belt_y: -0.08,
};

const SUV: CarStyle = CarStyle {
    windshield_base_x: 0.16,
    roof_front_x: 0.05,
    roof_rear_x: -0.38,
    rear_window_base_x: -0.45,
    belt_y: -0.12,
};

const WAGON: CarStyle = CarStyle {
    windshield_base_x: 0.14,
    roof_front_x: 0.03,
    roof_rear_x: -0.36,
    rear_window_base_x: -0.44,
    belt_y: -0.10,
};

/// Cabin half-width fractions: glass meets the body slightly inboard of
/// the full width, and the roof is narrower still.
const CABIN_BASE_Z: f64 = 0.35;
const CABIN_ROOF_Z: f64 = 0.32;

/// Part positions as (x, y, z) fractions of (l, h, w).
///
/// Every part is embedded strictly behind a mesh wall with a margin of a
/// few centimeters at real scale — never exactly on a surface. Ground-level
/// cameras see the roof and the beltline deck at fractions of a degree of
/// incidence, where the surface point in front of a part is numerically
/// ill-conditioned: an on-surface part would make "is the wall in front of
/// me" depend on sub-pixel geometry and the ray-cast and depth-buffer
/// occlusion oracles would stop agreeing. Cabin parts therefore sit inside
/// the glasshouse a few centimeters behind the glass and pillar planes.
/// The hood and trunk anchors sit deep in the body instead of just under
/// the deck: a near-horizontal ray grazing the deck crosses it meters ahead
/// of a shallow part, and whether that crossing lands on the deck or past
/// its edge would flip with viewing depth right inside the working range.
/// Embedding them deep moves that transition below the closest plausible
/// viewing distance, so their classification is depth-independent.
fn part_fractions(style: &CarStyle) -> [[f64; 3]; 36] {
    let b = style.belt_y;
    let handle_front_x = style.windshield_base_x - 0.10;
    let handle_rear_x = style.rear_window_base_x + 0.12;
    let cabin_z = CABIN_BASE_Z - 0.03;
    let roof_corner_z = CABIN_ROOF_Z - 0.03;
    [
        [0.33, 0.28, 0.40],                                            // wheel_front_left
        [0.33, 0.28, -0.40],                                           // wheel_front_right
        [-0.31, 0.28, 0.40],                                           // wheel_rear_left
        [-0.31, 0.28, -0.40],                                          // wheel_rear_right
        [0.47, 0.05, 0.33],                                            // headlight_left
        [0.47, 0.05, -0.33],                                           // headlight_right
        [-0.47, -0.02, 0.36],                                          // taillight_left
        [-0.47, -0.02, -0.36],                                         // taillight_right
        [0.48, 0.30, 0.0],                                             // bumper_front
        [-0.48, 0.30, 0.0],                                            // bumper_rear
        [style.windshield_base_x, -0.02, 0.47],                        // mirror_left
        [style.windshield_base_x, -0.02, -0.47],                       // mirror_right
        [style.windshield_base_x - 0.03, b - 0.03, cabin_z],           // windshield_bottom_left
        [style.windshield_base_x - 0.03, b - 0.03, -cabin_z],          // windshield_bottom_right
        [style.roof_front_x - 0.02, -0.45, roof_corner_z],             // roof_front_left
        [style.roof_front_x - 0.02, -0.45, -roof_corner_z],            // roof_front_right
        [style.roof_rear_x + 0.02, -0.45, roof_corner_z],              // roof_rear_left
        [style.roof_rear_x + 0.02, -0.45, -roof_corner_z],             // roof_rear_right
        [style.rear_window_base_x + 0.03, b - 0.03, cabin_z],          // rear_window_bottom_left
        [style.rear_window_base_x + 0.03, b - 0.03, -cabin_z],         // rear_window_bottom_right
        [handle_front_x, -0.04, 0.48],                                 // door_handle_front_left
        [handle_front_x, -0.04, -0.48],                                // door_handle_front_right
        [handle_rear_x, -0.04, 0.48],                                  // door_handle_rear_left
        [handle_rear_x, -0.04, -0.48],                                 // door_handle_rear_right
        [0.48, 0.15, 0.0],                                             // plate_front
        [-0.48, 0.15, 0.0],                                            // plate_rear
        [0.48, 0.02, 0.0],                                             // grille_center
        [(0.5 + style.windshield_base_x) / 2.0, b + 0.12, 0.0],        // hood_center
        [(-0.5 + style.rear_window_base_x) / 2.0, b + 0.06, 0.0],      // trunk_center
        [(style.roof_front_x + style.roof_rear_x) / 2.0, -0.45, 0.0],  // roof_center
        [style.roof_rear_x + 0.04, -0.45, 0.10],                       // antenna_base
        [0.47, 0.28, 0.28],                                            // fog_light_left
        [0.47, 0.28, -0.28],                                           // fog_light_right
        [style.rear_window_base_x - 0.02, -0.02, 0.48],                // fuel_cap_left
        [0.0, 0.34, 0.48],                                             // rocker_left
        [0.0, 0.34, -0.48],                                            // rocker_right
    ]
}

/// Appends a bilinearly subdivided quad (`n`×`n` cells, two triangles per
/// cell) to the mesh under construction. Corners wind around the quad.
fn push_quad_grid(
    vertices: &mut Vec<Point3>,
    triangles: &mut Vec<[usize; 3]>,
    corners: [Point3; 4],
    n: usize,
) {
    let base = vertices.len();
    // Convex form: exact at t = 0 and t = 1, so grid borders coincide
    // bitwise with the quad corners and extents stay exact.
    let lerp = |a: Point3, b: Point3, t: f64| -> Point3 {
        [
            a[0] * (1.0 - t) + b[0] * t,
            a[1] * (1.0 - t) + b[1] * t,
            a[2] * (1.0 - t) + b[2] * t,
        ]
    };
    for i in 0..=n {
        let u = i as f64 / n as f64;
        let left = lerp(corners[0], corners[3], u);
        let right = lerp(corners[1], corners[2], u);
        for j in 0..=n {
            let v = j as f64 / n as f64;
            vertices.push(lerp(left, right, v));
        }
    }
    let idx = |i: usize, j: usize| base + i * (n + 1) + j;
    for i in 0..n {
        for j in 0..n {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
}

/// Builds the occlusion mesh for one style at the given physical size:
/// a subdivided body box from beltline to floor, plus a glasshouse
/// (windshield, roof, rear window, two cabin sides) reaching the full
/// height.
///
/// Each face is labeled with the nearest part drawn from the candidate set
/// of the surface it belongs to — the parts that physically live on or
/// directly behind that surface. Restricting candidates keeps label
/// regions large and contiguous: a surface a camera happens to see edge-on
/// then carries one label over the whole stretch a near-grazing ray can
/// slide across, so occlusion classification does not hinge on sub-pixel
/// ray placement. The beltline decks take a single owner each for the same
/// reason, and the glass, roof, and cabin-side cells around each pillar
/// share that corner's part so classification is stable across the edge.
fn build_mesh(style: &CarStyle, template: &Template3D, parts: &[Point3]) -> VisibilityMesh {
    let hx = template.l / 2.0;
    let hy = template.h / 2.0;
    let hz = template.w / 2.0;
    let belt = style.belt_y * template.h;
    let wb = style.windshield_base_x * template.l;
    let rf = style.roof_front_x * template.l;
    let rr = style.roof_rear_x * template.l;
    let rwb = style.rear_window_base_x * template.l;
    let base_z = CABIN_BASE_Z * template.w;
    let roof_z = CABIN_ROOF_Z * template.w;

    // Part indices (0-based) allowed on each surface.
    const NOSE: &[usize] = &[4, 5, 8, 24, 26, 31, 32];
    const TAIL: &[usize] = &[6, 7, 9, 25];
    const LEFT_UPPER: &[usize] = &[10, 20, 22, 33];
    const LEFT_LOWER: &[usize] = &[0, 2, 34];
    const RIGHT_UPPER: &[usize] = &[11, 21, 23];
    const RIGHT_LOWER: &[usize] = &[1, 3, 35];
    const FLOOR: &[usize] = &[0, 1, 2, 3, 34, 35];
    const HOOD_DECK: &[usize] = &[27];
    const MID_DECK: &[usize] = &[27, 28];
    const TRUNK_DECK: &[usize] = &[28];
    const WINDSHIELD: &[usize] = &[12, 13, 14, 15];
    const ROOF: &[usize] = &[14, 15, 16, 17];
    const REAR_WINDOW: &[usize] = &[16, 17, 18, 19];
    const LEFT_CABIN: &[usize] = &[12, 14, 16, 18];
    const RIGHT_CABIN: &[usize] = &[13, 15, 17, 19];

    // The body sides split at mid-door height: the upper strip carries the
    // beltline hardware (mirrors, handles, fuel cap), the lower strip the
    // wheels and rockers. A near-parallel view slides a grazing ray along
    // the wall horizontally, so a horizontal label boundary stays put where
    // a mixed full-height wall would let the slide jump between the two
    // part groups.
    let ys = 0.15 * template.h;
    let quads: [([Point3; 4], &[usize]); 15] = [
        ([[hx, belt, hz], [hx, belt, -hz], [hx, hy, -hz], [hx, hy, hz]], NOSE),
        ([[-hx, belt, hz], [-hx, belt, -hz], [-hx, hy, -hz], [-hx, hy, hz]], TAIL),
        ([[-hx, belt, hz], [hx, belt, hz], [hx, ys, hz], [-hx, ys, hz]], LEFT_UPPER),
        ([[-hx, ys, hz], [hx, ys, hz], [hx, hy, hz], [-hx, hy, hz]], LEFT_LOWER),
        ([[-hx, belt, -hz], [hx, belt, -hz], [hx, ys, -hz], [-hx, ys, -hz]], RIGHT_UPPER),
        ([[-hx, ys, -hz], [hx, ys, -hz], [hx, hy, -hz], [-hx, hy, -hz]], RIGHT_LOWER),
        ([[-hx, hy, hz], [hx, hy, hz], [hx, hy, -hz], [-hx, hy, -hz]], FLOOR),
        // The deck splits at the glasshouse so the hood and trunk stretches
        // can each carry one owner; the middle piece sits under the cabin.
        ([[wb, belt, hz], [hx, belt, hz], [hx, belt, -hz], [wb, belt, -hz]], HOOD_DECK),
        ([[rwb, belt, hz], [wb, belt, hz], [wb, belt, -hz], [rwb, belt, -hz]], MID_DECK),
        ([[-hx, belt, hz], [rwb, belt, hz], [rwb, belt, -hz], [-hx, belt, -hz]], TRUNK_DECK),
        (
            [[wb, belt, base_z], [wb, belt, -base_z], [rf, -hy, -roof_z], [rf, -hy, roof_z]],
            WINDSHIELD,
        ),
        ([[rf, -hy, roof_z], [rf, -hy, -roof_z], [rr, -hy, -roof_z], [rr, -hy, roof_z]], ROOF),
        (
            [[rr, -hy, roof_z], [rr, -hy, -roof_z], [rwb, belt, -base_z], [rwb, belt, base_z]],
            REAR_WINDOW,
        ),
        (
            [[wb, belt, base_z], [rf, -hy, roof_z], [rr, -hy, roof_z], [rwb, belt, base_z]],
            LEFT_CABIN,
        ),
        (
            [[wb, belt, -base_z], [rf, -hy, -roof_z], [rr, -hy, -roof_z], [rwb, belt, -base_z]],
            RIGHT_CABIN,
        ),
    ];

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (quad, candidates) in quads {
        let mut triangles = Vec::new();
        push_quad_grid(&mut vertices, &mut triangles, quad, 2);
        for t in triangles {
            let c = [
                (vertices[t[0]][0] + vertices[t[1]][0] + vertices[t[2]][0]) / 3.0,
                (vertices[t[0]][1] + vertices[t[1]][1] + vertices[t[2]][1]) / 3.0,
                (vertices[t[0]][2] + vertices[t[1]][2] + vertices[t[2]][2]) / 3.0,
            ];
            let mut best = candidates[0];
            let mut best_d = f64::INFINITY;
            for &i in candidates {
                let p = parts[i];
                let d = (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2) + (c[2] - p[2]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            faces.push(MeshFace { vertices: t, part_label: best + 1 });
        }
    }
    VisibilityMesh { vertices, faces }
}

fn build_model(id: &str, style: &CarStyle, template: Template3D) -> BankModel {
    let points: Vec<Point3> = part_fractions(style)
        .iter()
        .map(|f| [f[0] * template.l, f[1] * template.h, f[2] * template.w])
        .collect();
    let mesh = build_mesh(style, &template, &points);
    BankModel { id: id.to_string(), template, parts: Shape3D { points }, mesh }
}

/// The built-in four-model bank (sedan, hatchback, SUV, wagon).
pub fn synthetic_bank() -> ShapeBank {
    ShapeBank {
        n_parts: PART_NAMES.len(),
        models: vec![
            build_model("sedan_a", &SEDAN, Template3D::new(1.78, 1.45, 4.55)),
            build_model("hatchback_a", &HATCHBACK, Template3D::new(1.72, 1.50, 4.05)),
            build_model("suv_a", &SUV, Template3D::new(1.90, 1.76, 4.68)),
            build_model("wagon_a", &WAGON, Template3D::new(1.84, 1.52, 4.85)),
        ],
    }
}

/// Intrinsics matching a common KITTI left color camera setup.
pub fn kitti_like_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 721.5377,
        fy: 721.5377,
        cx: 609.5593,
        cy: 172.854,
        img_w: 1242,
        img_h: 375,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{model_extents, scale_shape_to_template};

    #[test]
    fn bank_validates_without_warnings() {
        let bank = synthetic_bank();
        let warnings = bank.validate().expect("bank must be structurally valid");
        assert!(warnings.is_empty(), "unexpected warnings: {warnings:?}");
        assert_eq!(bank.n_parts, 36);
        assert_eq!(bank.models.len(), 4);
    }

    #[test]
    fn part_names_are_unique_and_match_count() {
        let mut names: Vec<&str> = PART_NAMES.to_vec();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 36);
    }

    #[test]
    fn mesh_extents_equal_template_exactly() {
        for m in synthetic_bank().models {
            let e = model_extents(&m.mesh);
            assert_eq!(e.w, m.template.w, "{}", m.id);
            assert_eq!(e.h, m.template.h, "{}", m.id);
            assert_eq!(e.l, m.template.l, "{}", m.id);
        }
    }

    #[test]
    fn mesh_has_expected_face_count_and_valid_labels() {
        // 15 quads, each a 2x2 grid of 2 triangles.
        for m in synthetic_bank().models {
            assert_eq!(m.mesh.faces.len(), 120, "{}", m.id);
            for f in &m.mesh.faces {
                assert!(f.part_label >= 1 && f.part_label <= 36);
            }
            let mut used: Vec<usize> = m.mesh.faces.iter().map(|f| f.part_label).collect();
            used.sort_unstable();
            used.dedup();
            assert!(used.len() >= 10, "labels collapse to too few parts: {used:?}");
        }
    }

    #[test]
    fn lateral_parts_mirror_and_antenna_does_not() {
        let bank = synthetic_bank();
        for m in &bank.models {
            let p = &m.parts.points;
            // wheel_front_left vs wheel_front_right
            assert_eq!(p[0][0], p[1][0]);
            assert_eq!(p[0][1], p[1][1]);
            assert_eq!(p[0][2], -p[1][2]);
            // mirror pair
            assert_eq!(p[10][2], -p[11][2]);
            // the antenna sits off-center with no counterpart
            let antenna = p[30];
            assert!(antenna[2] > 0.0);
            assert!(!p.iter().any(|q| q[0] == antenna[0]
                && q[1] == antenna[1]
                && q[2] == -antenna[2]));
        }
    }

    #[test]
    fn cabin_layout_differs_across_styles_beyond_scaling() {
        let bank = synthetic_bank();
        let sedan = &bank.models[0];
        let suv = &bank.models[2];
        let rescaled =
            scale_shape_to_template(&sedan.parts, &sedan.template, &suv.template);
        let roof_rear_left = 16;
        let wheel_front_left = 0;
        let d_roof = (rescaled.points[roof_rear_left][0] - suv.parts.points[roof_rear_left][0]).abs();
        assert!(d_roof > 0.1, "roof rear should move between styles, moved {d_roof}");
        for a in 0..3 {
            assert!(
                (rescaled.points[wheel_front_left][a] - suv.parts.points[wheel_front_left][a])
                    .abs()
                    < 1e-12,
                "wheel layout is shared, so rescaling must reproduce it"
            );
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(synthetic_bank(), synthetic_bank());
    }

    #[test]
    fn camera_matches_published_intrinsics() {
        let k = kitti_like_camera();
        assert_eq!(k.fx, 721.5377);
        assert_eq!(k.fy, 721.5377);
        assert_eq!(k.cx, 609.5593);
        assert_eq!(k.cy, 172.854);
        assert_eq!((k.img_w, k.img_h), (1242, 375));
    }

    #[test]
    fn parts_stay_inside_the_template_box() {
        for m in synthetic_bank().models {
            let b = [m.template.l / 2.0, m.template.h / 2.0, m.template.w / 2.0];
            for (i, p) in m.parts.points.iter().enumerate() {
                for a in 0..3 {
                    assert!(
                        p[a].abs() <= b[a] + 1e-12,
                        "part {} axis {a} at {} exceeds {}",
                        PART_NAMES[i],
                        p[a],
                        b[a]
                    );
                }
            }
        }
    }
}
