//! Full 6-DoF pose initialization from 2D/3D correspondences.
//!
//! The solver expresses every 3D point as fixed barycentric coordinates of
//! four control points (centroid plus principal axes), stacks the pinhole
//! constraints into a homogeneous linear system in the camera-frame control
//! point coordinates, and recovers those coordinates from the system's null
//! space. Candidate combinations of up to three null-space vectors are scored
//! by geometric reprojection error after a rigid alignment between the world
//! and recovered camera control points; the best-scoring candidate wins.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};

use crate::geom::{CameraIntrinsics, Point2, Point3, MIN_DEPTH};

use super::PoseError;

/// Minimum correspondences for the full 6-DoF solve.
pub const MIN_POINTS_FULL: usize = 6;

/// Unconstrained rigid pose estimate with its geometric fit quality.
#[derive(Debug, Clone)]
pub struct EpnpSolution {
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World origin in camera coordinates.
    pub t: Point3,
    /// Root-mean-square reprojection error in pixels.
    pub reproj_rmse: f64,
}

/// Yaw component of a rotation: the heading of the object's x axis in the
/// camera x/z plane.
pub fn yaw_from_rotation(r: &Matrix3<f64>) -> f64 {
    // Column 0 is the object heading in camera coordinates; for a pure yaw
    // it equals (cos yaw, 0, -sin yaw).
    (-r[(2, 0)]).atan2(r[(0, 0)])
}

/// Solves for an unconstrained pose from at least six correspondences.
pub fn solve_epnp(
    points3: &[Point3],
    points2: &[Point2],
    k: &CameraIntrinsics,
) -> Result<EpnpSolution, PoseError> {
    let n = points3.len();
    if n != points2.len() {
        return Err(PoseError::DegenerateConfiguration(format!(
            "{} 3D points vs {} 2D points",
            n,
            points2.len()
        )));
    }
    if n < MIN_POINTS_FULL {
        return Err(PoseError::DegenerateConfiguration(format!(
            "{n} correspondences; at least {MIN_POINTS_FULL} required"
        )));
    }

    // Control points: centroid plus principal axes scaled to the data spread.
    let centroid = points3.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points3 {
        let d = Vector3::from(*p) - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = cov.symmetric_eigen();
    let max_eval = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut control_w = [Vector3::zeros(); 4];
    control_w[0] = centroid;
    for j in 0..3 {
        let ev = eig.eigenvalues[j];
        if ev <= 1e-12 * max_eval.max(1e-300) {
            return Err(PoseError::DegenerateConfiguration(
                "3D points are (near-)coplanar".into(),
            ));
        }
        control_w[j + 1] = centroid + ev.sqrt() * eig.eigenvectors.column(j);
    }

    // Barycentric coordinates of each point in the control basis.
    let basis = Matrix3::from_columns(&[
        control_w[1] - control_w[0],
        control_w[2] - control_w[0],
        control_w[3] - control_w[0],
    ]);
    let basis_inv = basis
        .try_inverse()
        .ok_or_else(|| PoseError::DegenerateConfiguration("control basis is singular".into()))?;
    let alphas: Vec<Vector4<f64>> = points3
        .iter()
        .map(|p| {
            let a = basis_inv * (Vector3::from(*p) - control_w[0]);
            Vector4::new(1.0 - a.x - a.y - a.z, a.x, a.y, a.z)
        })
        .collect();

    // Homogeneous system in the 12 camera-frame control coordinates.
    let mut m = DMatrix::zeros(2 * n, 12);
    for (i, (q, a)) in points2.iter().zip(&alphas).enumerate() {
        for j in 0..4 {
            m[(2 * i, 3 * j)] = a[j] * k.fx;
            m[(2 * i, 3 * j + 2)] = a[j] * (k.cx - q[0]);
            m[(2 * i + 1, 3 * j + 1)] = a[j] * k.fy;
            m[(2 * i + 1, 3 * j + 2)] = a[j] * (k.cy - q[1]);
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let sv = &svd.singular_values;
    // A well-posed non-planar problem has exactly one (near-)vanishing
    // singular value. A null space wider than four columns means the
    // observations do not constrain the control points (e.g. every part at
    // one pixel) and no candidate below can be trusted.
    if sv[8] <= 1e-9 * sv[0] {
        return Err(PoseError::DegenerateConfiguration(
            "projection constraints are rank-deficient".into(),
        ));
    }
    // Null-space basis, most-null first.
    let nullv: Vec<[Vector3<f64>; 4]> = (0..4)
        .map(|idx| {
            let row = v_t.row(11 - idx);
            [
                Vector3::new(row[0], row[1], row[2]),
                Vector3::new(row[3], row[4], row[5]),
                Vector3::new(row[6], row[7], row[8]),
                Vector3::new(row[9], row[10], row[11]),
            ]
        })
        .collect();

    // Pairwise world distances between control points.
    const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let dw2: Vec<f64> = PAIRS
        .iter()
        .map(|&(i, j)| (control_w[i] - control_w[j]).norm_squared())
        .collect();
    // dv[k][pair]: control-point difference within null vector k.
    let dv: Vec<Vec<Vector3<f64>>> = nullv
        .iter()
        .map(|cp| PAIRS.iter().map(|&(i, j)| cp[i] - cp[j]).collect())
        .collect();
    let dot = |a: usize, b: usize, p: usize| dv[a][p].dot(&dv[b][p]);

    let mut candidates: Vec<Vector4<f64>> = Vec::new();

    // One null vector: scale from the distance ratios.
    {
        let num: f64 = (0..6).map(|p| dot(0, 0, p).sqrt() * dw2[p].sqrt()).sum();
        let den: f64 = (0..6).map(|p| dot(0, 0, p)).sum();
        if den > 0.0 {
            candidates.push(Vector4::new(num / den, 0.0, 0.0, 0.0));
        }
    }
    // Two null vectors: linear solve for (b11, b12, b22).
    {
        let mut l = DMatrix::zeros(6, 3);
        let mut rhs = DVector::zeros(6);
        for p in 0..6 {
            l[(p, 0)] = dot(0, 0, p);
            l[(p, 1)] = 2.0 * dot(0, 1, p);
            l[(p, 2)] = dot(1, 1, p);
            rhs[p] = dw2[p];
        }
        if let Some(y) = l.svd(true, true).solve(&rhs, 1e-12).ok() {
            let mut b1 = y[0].abs().sqrt();
            let b2 = y[2].abs().sqrt() * if (y[0] < 0.0) == (y[2] < 0.0) { 1.0 } else { 0.0 };
            if y[1] < 0.0 {
                b1 = -b1;
            }
            candidates.push(Vector4::new(b1, b2, 0.0, 0.0));
        }
    }
    // Three null vectors: linear solve for (b11, b12, b22, b13, b23).
    {
        let mut l = DMatrix::zeros(6, 5);
        let mut rhs = DVector::zeros(6);
        for p in 0..6 {
            l[(p, 0)] = dot(0, 0, p);
            l[(p, 1)] = 2.0 * dot(0, 1, p);
            l[(p, 2)] = dot(1, 1, p);
            l[(p, 3)] = 2.0 * dot(0, 2, p);
            l[(p, 4)] = 2.0 * dot(1, 2, p);
            rhs[p] = dw2[p];
        }
        if let Some(y) = l.svd(true, true).solve(&rhs, 1e-12).ok() {
            let mut b1 = y[0].abs().sqrt();
            let b2 = y[2].abs().sqrt() * if (y[0] < 0.0) == (y[2] < 0.0) { 1.0 } else { 0.0 };
            if y[1] < 0.0 {
                b1 = -b1;
            }
            let b3 = if b1.abs() > 1e-12 { y[3] / b1 } else { 0.0 };
            candidates.push(Vector4::new(b1, b2, b3, 0.0));
        }
    }

    // Polish every candidate on the distance constraints.
    for c in &mut candidates {
        *c = refine_betas(*c, &dv, &dw2);
    }

    let mut best: Option<EpnpSolution> = None;
    let mut saw_candidate = false;
    for betas in &candidates {
        let mut control_c = [Vector3::zeros(); 4];
        for j in 0..4 {
            for (kq, nv) in nullv.iter().enumerate() {
                control_c[j] += betas[kq] * nv[j];
            }
        }
        // Depth sign is a free choice of the homogeneous solution.
        let depth_sum: f64 = alphas.iter().map(|a| (0..4).map(|j| a[j] * control_c[j].z).sum::<f64>()).sum();
        if depth_sum < 0.0 {
            for c in &mut control_c {
                *c = -*c;
            }
        }
        let points_c: Vec<Vector3<f64>> = alphas
            .iter()
            .map(|a| (0..4).map(|j| a[j] * control_c[j]).sum())
            .collect();
        saw_candidate = true;
        let (rotation, t) = rigid_align(points3, &points_c);
        if let Some(rmse) = reproject_rmse(points3, points2, k, &rotation, &t) {
            if best.as_ref().map_or(true, |b| rmse < b.reproj_rmse) {
                best = Some(EpnpSolution { rotation, t: [t.x, t.y, t.z], reproj_rmse: rmse });
            }
        }
    }
    match best {
        Some(sol) => Ok(sol),
        None if saw_candidate => Err(PoseError::BehindCamera),
        None => Err(PoseError::DegenerateConfiguration("no candidate pose".into())),
    }
}

/// Gauss-Newton polish of the null-space mixing weights on the control-point
/// distance constraints (a handful of fixed iterations, standard practice).
fn refine_betas(mut betas: Vector4<f64>, dv: &[Vec<Vector3<f64>>], dw2: &[f64]) -> Vector4<f64> {
    for _ in 0..5 {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for p in 0..6 {
            let mixed: Vector3<f64> =
                (0..4).map(|kq| betas[kq] * dv[kq][p]).sum();
            let r = mixed.norm_squared() - dw2[p];
            let mut row = Vector4::zeros();
            for kq in 0..4 {
                row[kq] = 2.0 * mixed.dot(&dv[kq][p]);
            }
            jtj += row * row.transpose();
            jtr += row * r;
        }
        match (jtj + Matrix4::identity() * 1e-12).lu().solve(&jtr) {
            Some(delta) => betas -= delta,
            None => break,
        }
    }
    betas
}

/// Least-squares rigid alignment taking world points onto camera points.
fn rigid_align(world: &[Point3], camera: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = world.len() as f64;
    let cw = world.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n;
    let cc = camera.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut h = Matrix3::zeros();
    for (pw, pc) in world.iter().zip(camera) {
        h += (Vector3::from(*pw) - cw) * (pc - cc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut r = v_t.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        let mut v = v_t.transpose();
        v.column_mut(2).neg_mut();
        r = v * u.transpose();
    }
    let t = cc - r * cw;
    (r, t)
}

/// Geometric RMSE of a full pose; `None` if any point lands behind the camera.
pub(super) fn reproject_rmse(
    points3: &[Point3],
    points2: &[Point2],
    k: &CameraIntrinsics,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Option<f64> {
    let mut acc = 0.0;
    for (p, q) in points3.iter().zip(points2) {
        let pc = r * Vector3::from(*p) + t;
        if pc.z <= MIN_DEPTH {
            return None;
        }
        let u = k.fx * pc.x / pc.z + k.cx;
        let v = k.fy * pc.y / pc.z + k.cy;
        acc += (u - q[0]).powi(2) + (v - q[1]).powi(2);
    }
    Some((acc / points3.len() as f64).sqrt())
}
