//! Depth-buffer occlusion oracle.
//!
//! An independent cross-check for the ray-casting visibility logic: all
//! scene meshes are rasterized into a supersampled depth buffer with
//! perspective-correct interpolation, and a part is considered blocked
//! when the buffer records a surface meaningfully closer than the part at
//! the part's pixel. The two implementations measure "closer" differently
//! (depth along the optical axis here, Euclidean ray distance there), so
//! genuinely ambiguous surfaces inside the margin band may classify
//! differently; that band is the agreed disagreement budget.

use crate::bank::VisibilityMesh;
use crate::geom::{CameraIntrinsics, MIN_DEPTH};

/// Supersampling factor relative to image resolution.
pub const SUPERSAMPLE: u32 = 4;

/// Per-pixel nearest surface: depth, vehicle index, and 1-based face label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub depth: f64,
    pub vehicle: usize,
    pub part_label: usize,
}

/// Supersampled depth buffer over the image plane.
pub struct DepthBuffer {
    width: usize,
    height: usize,
    scale: f64,
    samples: Vec<Option<SurfaceSample>>,
}

impl DepthBuffer {
    /// Rasterizes every mesh (camera-frame vertices) into a fresh buffer.
    ///
    /// Faces with any vertex at non-positive depth are skipped rather than
    /// clipped; scenes produced here keep vehicles well in front of the
    /// camera, and the ray-casting path is authoritative for edge cases.
    pub fn rasterize(camera: &CameraIntrinsics, meshes: &[VisibilityMesh]) -> DepthBuffer {
        let width = (camera.img_w * SUPERSAMPLE) as usize;
        let height = (camera.img_h * SUPERSAMPLE) as usize;
        let scale = SUPERSAMPLE as f64;
        let mut buf = DepthBuffer { width, height, scale, samples: vec![None; width * height] };
        for (vehicle, mesh) in meshes.iter().enumerate() {
            // Project once per mesh: (u, v) in buffer units plus inverse depth.
            let projected: Vec<Option<[f64; 3]>> = mesh
                .vertices
                .iter()
                .map(|p| {
                    if p[2] <= MIN_DEPTH {
                        None
                    } else {
                        let u = (camera.fx * p[0] / p[2] + camera.cx) * scale;
                        let v = (camera.fy * p[1] / p[2] + camera.cy) * scale;
                        Some([u, v, 1.0 / p[2]])
                    }
                })
                .collect();
            for face in &mesh.faces {
                let [ia, ib, ic] = face.vertices;
                let (Some(a), Some(b), Some(c)) = (projected[ia], projected[ib], projected[ic])
                else {
                    continue;
                };
                buf.fill_triangle(a, b, c, vehicle, face.part_label);
            }
        }
        buf
    }

    /// Rasterizes one screen triangle; vertices carry inverse depth.
    fn fill_triangle(&mut self, a: [f64; 3], b: [f64; 3], c: [f64; 3], vehicle: usize, label: usize) {
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area.abs() < 1e-12 {
            return;
        }
        let min_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let max_x = (a[0].max(b[0]).max(c[0]).ceil() as isize).min(self.width as isize - 1);
        let min_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let max_y = (a[1].max(b[1]).max(c[1]).ceil() as isize).min(self.height as isize - 1);
        if max_x < min_x as isize || max_y < min_y as isize {
            return;
        }
        let inv_area = 1.0 / area;
        for py in min_y..=max_y as usize {
            let y = py as f64 + 0.5;
            for px in min_x..=max_x as usize {
                let x = px as f64 + 0.5;
                // Signed barycentric weights; inside when all share the
                // triangle's orientation.
                let w0 = ((b[0] - x) * (c[1] - y) - (b[1] - y) * (c[0] - x)) * inv_area;
                let w1 = ((c[0] - x) * (a[1] - y) - (c[1] - y) * (a[0] - x)) * inv_area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // Screen-linear interpolation of inverse depth is
                // perspective-correct.
                let inv_z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                if inv_z <= 0.0 {
                    continue;
                }
                let depth = 1.0 / inv_z;
                let idx = py * self.width + px;
                if self.samples[idx].map_or(true, |s| depth < s.depth) {
                    self.samples[idx] = Some(SurfaceSample { depth, vehicle, part_label: label });
                }
            }
        }
    }

    /// Nearest recorded surface at image position `(u, v)` in ordinary
    /// pixel units; `None` outside the buffer or where nothing rendered.
    pub fn sample(&self, u: f64, v: f64) -> Option<SurfaceSample> {
        let px = (u * self.scale).floor();
        let py = (v * self.scale).floor();
        if px < 0.0 || py < 0.0 {
            return None;
        }
        let (px, py) = (px as usize, py as usize);
        if px >= self.width || py >= self.height {
            return None;
        }
        self.samples[py * self.width + px]
    }
}
