//! Ray/mesh intersection for part-occlusion reasoning.
//!
//! Rays originate at the camera center and are cast toward camera-frame
//! part locations; the nearest triangle hit strictly closer than the part
//! (by more than a small margin) blocks it. Intersection math is the
//! standard determinant-based ray/triangle test without backface culling —
//! occluders block regardless of winding.

use nalgebra::Vector3;

use crate::bank::VisibilityMesh;

/// Margin (meters) below the part distance a hit must clear to count as a
/// blocker. Keeps the part's own surface, which sits within a centimeter of
/// the part, from shadowing it.
pub const OCCLUSION_EPSILON: f64 = 0.01;

/// A ray/mesh intersection: distance along the (unit) ray and the face hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Distance from the ray origin in meters.
    pub distance: f64,
    /// Index into the face list.
    pub face: usize,
}

/// Distance along `dir` (unit length) from `origin` to the triangle, if the
/// ray hits it in front of the origin. Hits on edges count; rays parallel
/// to the triangle plane miss.
pub fn ray_triangle(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    v0: Vector3<f64>,
    v1: Vector3<f64>,
    v2: Vector3<f64>,
) -> Option<f64> {
    const PARALLEL_EPS: f64 = 1e-12;
    const EDGE_EPS: f64 = 1e-12;
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < PARALLEL_EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(&p) * inv_det;
    if u < -EDGE_EPS || u > 1.0 + EDGE_EPS {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv_det;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv_det;
    if t > PARALLEL_EPS {
        Some(t)
    } else {
        None
    }
}

/// Nearest forward intersection of the ray with a triangle mesh.
pub fn nearest_hit(origin: Vector3<f64>, dir: Vector3<f64>, mesh: &VisibilityMesh) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (idx, face) in mesh.faces.iter().enumerate() {
        let [a, b, c] = face.vertices;
        let t = ray_triangle(
            origin,
            dir,
            Vector3::from(mesh.vertices[a]),
            Vector3::from(mesh.vertices[b]),
            Vector3::from(mesh.vertices[c]),
        );
        if let Some(t) = t {
            if best.map_or(true, |h| t < h.distance) {
                best = Some(Hit { distance: t, face: idx });
            }
        }
    }
    best
}
