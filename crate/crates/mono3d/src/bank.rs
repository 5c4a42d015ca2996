//! 3D shape bank: vehicle templates, part-point shapes, and the low-resolution
//! labeled meshes used for occlusion reasoning.
//!
//! A bank is a JSON document:
//!
//! ```json
//! {
//!   "n_parts": 36,
//!   "models": [
//!     {
//!       "id": "sedan_a",
//!       "template": {"w": 1.8, "h": 1.45, "l": 4.6},
//!       "parts": [[x, y, z], ...],
//!       "mesh": {
//!         "vertices": [[x, y, z], ...],
//!         "faces": [[i, j, k, part_label], ...]
//!       }
//!     }
//!   ]
//! }
//! ```
//!
//! All coordinates are object-frame meters (see [`crate::geom`] for the axis
//! conventions). Face entries hold three 0-based vertex indices followed by a
//! **1-based** part label in `[1, n_parts]`. Every model carries exactly
//! `n_parts` part points, so shapes are comparable across the bank.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point3;

/// Physical vehicle dimensions in meters: width, height, length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template3D {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

/// Plausible passenger-vehicle dimension ranges (meters). Values outside
/// these produce load-time warnings, not errors.
pub const PLAUSIBLE_W: (f64, f64) = (1.0, 3.0);
pub const PLAUSIBLE_H: (f64, f64) = (0.5, 4.0);
pub const PLAUSIBLE_L: (f64, f64) = (2.0, 8.0);

impl Template3D {
    pub fn new(w: f64, h: f64, l: f64) -> Self {
        Self { w, h, l }
    }

    /// Human-readable warnings for dimensions outside the plausible ranges.
    pub fn plausibility_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v, (lo, hi)) in [
            ("w", self.w, PLAUSIBLE_W),
            ("h", self.h, PLAUSIBLE_H),
            ("l", self.l, PLAUSIBLE_L),
        ] {
            if v < lo || v > hi {
                out.push(format!("template {name} = {v} outside plausible range [{lo}, {hi}]"));
            }
        }
        out
    }
}

/// Fixed-cardinality set of 3D part points in the object frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape3D {
    pub points: Vec<Point3>,
}

impl Shape3D {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Triangle with a part label: three 0-based vertex indices plus the 1-based
/// label of the part this surface patch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct MeshFace {
    pub vertices: [usize; 3],
    pub part_label: usize,
}

impl From<[usize; 4]> for MeshFace {
    fn from(v: [usize; 4]) -> Self {
        Self { vertices: [v[0], v[1], v[2]], part_label: v[3] }
    }
}

impl From<MeshFace> for [usize; 4] {
    fn from(f: MeshFace) -> Self {
        [f.vertices[0], f.vertices[1], f.vertices[2], f.part_label]
    }
}

/// Low-resolution occlusion mesh with per-face part labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibilityMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<MeshFace>,
}

/// One bank entry: an identifier, physical dimensions, the part shape, and
/// the occlusion mesh, all at the model's native size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankModel {
    pub id: String,
    pub template: Template3D,
    pub parts: Shape3D,
    pub mesh: VisibilityMesh,
}

/// The full bank: `n_parts` is shared by every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeBank {
    pub n_parts: usize,
    pub models: Vec<BankModel>,
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("failed to read bank file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse bank JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid bank: {0}")]
    Validation(String),
}

/// Mesh vertices may exceed the template box by this relative margin before
/// validation rejects the model (mirrors, antennas, modeling slack).
pub const MESH_CONTAINMENT_SLACK: f64 = 0.05;

impl ShapeBank {
    pub fn from_json(json: &str) -> Result<Self, BankError> {
        let bank: ShapeBank = serde_json::from_str(json)?;
        let warnings = bank.validate()?;
        for w in &warnings {
            log::warn!("{w}");
        }
        Ok(bank)
    }

    /// Structural validation. Returns non-fatal warnings (implausible
    /// dimensions, extents drifting from the declared template).
    pub fn validate(&self) -> Result<Vec<String>, BankError> {
        let fail = |msg: String| Err(BankError::Validation(msg));
        if self.n_parts == 0 {
            return fail("n_parts must be at least 1".into());
        }
        if self.models.is_empty() {
            return fail("bank contains no models".into());
        }
        let mut warnings = Vec::new();
        let mut seen_ids = std::collections::HashSet::new();
        for m in &self.models {
            if !seen_ids.insert(m.id.as_str()) {
                warnings.push(format!("duplicate model id '{}'", m.id));
            }
            let t = &m.template;
            if !(t.w > 0.0 && t.h > 0.0 && t.l > 0.0) {
                return fail(format!("model '{}': non-positive template dimensions", m.id));
            }
            for w in t.plausibility_warnings() {
                warnings.push(format!("model '{}': {w}", m.id));
            }
            if m.parts.len() != self.n_parts {
                return fail(format!(
                    "model '{}': {} part points, bank declares {}",
                    m.id,
                    m.parts.len(),
                    self.n_parts
                ));
            }
            if m.mesh.vertices.len() < 3 || m.mesh.faces.is_empty() {
                return fail(format!("model '{}': degenerate mesh", m.id));
            }
            let bound = [
                (1.0 + MESH_CONTAINMENT_SLACK) * t.l / 2.0,
                (1.0 + MESH_CONTAINMENT_SLACK) * t.h / 2.0,
                (1.0 + MESH_CONTAINMENT_SLACK) * t.w / 2.0,
            ];
            for (vi, v) in m.mesh.vertices.iter().enumerate() {
                if v[0].abs() > bound[0] || v[1].abs() > bound[1] || v[2].abs() > bound[2] {
                    return fail(format!(
                        "model '{}': mesh vertex {vi} at {v:?} outside the inflated template box",
                        m.id
                    ));
                }
            }
            for (fi, f) in m.mesh.faces.iter().enumerate() {
                if f.vertices.iter().any(|&i| i >= m.mesh.vertices.len()) {
                    return fail(format!("model '{}': face {fi} references a missing vertex", m.id));
                }
                if f.part_label < 1 || f.part_label > self.n_parts {
                    return fail(format!(
                        "model '{}': face {fi} label {} outside [1, {}]",
                        m.id, f.part_label, self.n_parts
                    ));
                }
            }
            let ext = model_extents(&m.mesh);
            for (name, e, d) in [("w", ext.w, t.w), ("h", ext.h, t.h), ("l", ext.l, t.l)] {
                if (e - d).abs() / d > 0.05 {
                    warnings.push(format!(
                        "model '{}': mesh {name}-extent {e:.3} deviates from template {d:.3} by more than 5%",
                        m.id
                    ));
                }
            }
        }
        Ok(warnings)
    }

    /// Canonical JSON form; serializing a loaded bank is idempotent.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bank serialization cannot fail");
        s.push('\n');
        s
    }
}

/// Loads and validates a bank file, logging any validation warnings.
pub fn load_bank<P: AsRef<Path>>(path: P) -> Result<ShapeBank, BankError> {
    ShapeBank::from_json(&std::fs::read_to_string(path)?)
}

/// Writes the canonical JSON form of a bank.
pub fn save_bank<P: AsRef<Path>>(bank: &ShapeBank, path: P) -> Result<(), BankError> {
    Ok(std::fs::write(path, bank.to_canonical_json())?)
}

/// Rescales an object-frame point between two templates: x scales with
/// length, y with height, z with width.
pub fn scale_point_to_template(p: Point3, src: &Template3D, dst: &Template3D) -> Point3 {
    // Ratios first: identical templates give exactly 1.0 per axis, making
    // the rescale a bitwise no-op.
    [p[0] * (dst.l / src.l), p[1] * (dst.h / src.h), p[2] * (dst.w / src.w)]
}

/// Rescales a whole shape between templates (anisotropic, axis-aligned).
pub fn scale_shape_to_template(shape: &Shape3D, src: &Template3D, dst: &Template3D) -> Shape3D {
    Shape3D {
        points: shape.points.iter().map(|&p| scale_point_to_template(p, src, dst)).collect(),
    }
}

/// Rescales mesh vertices between templates, keeping connectivity and labels.
pub fn scale_mesh_to_template(
    mesh: &VisibilityMesh,
    src: &Template3D,
    dst: &Template3D,
) -> VisibilityMesh {
    VisibilityMesh {
        vertices: mesh.vertices.iter().map(|&v| scale_point_to_template(v, src, dst)).collect(),
        faces: mesh.faces.clone(),
    }
}

/// Axis-aligned extents of the mesh, reported as (w, h, l): width from the z
/// span, height from y, length from x. Requires at least one vertex.
pub fn model_extents(mesh: &VisibilityMesh) -> Template3D {
    assert!(!mesh.vertices.is_empty(), "extents of an empty mesh are undefined");
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in &mesh.vertices {
        for a in 0..3 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    Template3D { w: hi[2] - lo[2], h: hi[1] - lo[1], l: hi[0] - lo[0] }
}
