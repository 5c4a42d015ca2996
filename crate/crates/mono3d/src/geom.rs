//! Camera model, rigid pose, and box geometry.
//!
//! Conventions used throughout the crate:
//!
//! * **Camera frame**: x right, y down, z forward (optical axis). A point is
//!   only visible if its z coordinate is strictly positive.
//! * **Object frame**: origin at the 3D bounding-box centroid, +x along the
//!   vehicle heading (length axis), +y down (height axis), +z towards the
//!   vehicle's left (width axis). Both frames are right-handed.
//! * **Yaw**: rotation about the camera's y (down) axis, normalized to
//!   `(-pi, pi]`. A vehicle with yaw 0 heads towards camera +x.
//! * **2D boxes**: center format `(cx, cy, w, h)` in pixels, `w, h > 0`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::Template3D;

/// 2D point in pixel coordinates `[u, v]`.
pub type Point2 = [f64; 2];
/// 3D point `[x, y, z]` (meters).
pub type Point3 = [f64; 3];

/// Depth below this value counts as "behind the camera" for projection.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    /// The point at `index` (0 for single-point projections) has depth
    /// `z <= MIN_DEPTH` and cannot be projected.
    #[error("point {index} is behind the camera (z = {z})")]
    DegenerateDepth { index: usize, z: f64 },
}

/// Pinhole camera: focal lengths and principal point in pixels, plus the
/// image size used for bounds checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub img_w: u32,
    pub img_h: u32,
}

impl CameraIntrinsics {
    /// True if the pixel `[u, v]` lies inside `[0, img_w) x [0, img_h)`.
    pub fn contains(&self, p: Point2) -> bool {
        p[0] >= 0.0 && p[0] < self.img_w as f64 && p[1] >= 0.0 && p[1] < self.img_h as f64
    }
}

/// Rigid pose restricted to the yaw/translation family used for vehicles:
/// rotation about the camera y axis followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    /// Rotation about camera y (down), in `(-pi, pi]`.
    pub yaw: f64,
    /// Object origin in the camera frame (meters).
    pub t: Point3,
}

impl Pose {
    /// Builds a pose with the yaw normalized into `(-pi, pi]`.
    pub fn new(yaw: f64, t: Point3) -> Self {
        Self { yaw: normalize_angle(yaw), t }
    }
}

/// Maps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a.rem_euclid(two_pi); // [0, 2*pi)
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Rotation matrix for a yaw about the camera y (down) axis.
///
/// Columns are the object axes expressed in the camera frame; at yaw 0 the
/// object heading (+x) coincides with camera +x.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Applies `pose` to an object-frame point, returning camera-frame coordinates.
pub fn transform_point(pose: &Pose, p: Point3) -> Point3 {
    let (s, c) = pose.yaw.sin_cos();
    [
        c * p[0] + s * p[2] + pose.t[0],
        p[1] + pose.t[1],
        -s * p[0] + c * p[2] + pose.t[2],
    ]
}

/// Projects a camera-frame point through the pinhole model.
pub fn project_camera_point(k: &CameraIntrinsics, p: Point3) -> Result<Point2, GeomError> {
    if p[2] <= MIN_DEPTH {
        return Err(GeomError::DegenerateDepth { index: 0, z: p[2] });
    }
    Ok([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])
}

/// Projects an object-frame point under `pose`.
pub fn project_point(k: &CameraIntrinsics, pose: &Pose, p: Point3) -> Result<Point2, GeomError> {
    project_camera_point(k, transform_point(pose, p))
}

/// Projects a list of object-frame points; the error reports the index of the
/// first point that falls behind the camera.
pub fn project_shape(
    k: &CameraIntrinsics,
    pose: &Pose,
    points: &[Point3],
) -> Result<Vec<Point2>, GeomError> {
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            project_point(k, pose, p).map_err(|e| match e {
                GeomError::DegenerateDepth { z, .. } => GeomError::DegenerateDepth { index: i, z },
            })
        })
        .collect()
}

/// Axis-aligned 2D box in center format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Box2D {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Box2D {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Corner representation `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { cx: (x1 + x2) / 2.0, cy: (y1 + y2) / 2.0, w: x2 - x1, h: y2 - y1 }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// True if the box has strictly positive extent in both axes.
    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()
    }
}

/// Oriented 3D bounding box: centroid, yaw, and dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Box3D {
    /// Centroid in the camera frame (meters).
    pub center: Point3,
    /// Heading about camera y, radians.
    pub yaw: f64,
    /// Physical dimensions (w, h, l) in meters.
    pub template: Template3D,
}

/// A 2D box with a detection confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub box2d: Box2D,
    pub score: f64,
}

/// Intersection-over-union of two boxes. Zero when disjoint.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Greedy non-maximum suppression.
///
/// Boxes are visited in descending score order (ties resolved by the lower
/// input index); a box is kept iff its IoU with every already-kept box is at
/// most `threshold`. Returns indices into `boxes` in descending score order.
pub fn nms(boxes: &[ScoredBox], threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .partial_cmp(&boxes[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.iter().all(|&j| iou(&boxes[i].box2d, &boxes[j].box2d) <= threshold) {
            kept.push(i);
        }
    }
    kept
}
