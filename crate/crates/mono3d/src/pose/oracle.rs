//! Exhaustive reference solver for yaw-constrained pose.
//!
//! Sweeps yaw over a uniform grid; at each yaw the translation is the exact
//! linear least-squares solution of the algebraic projection constraints,
//! and the candidate is scored by geometric reprojection RMSE. One parabolic
//! interpolation step around the best grid node sharpens the yaw estimate.
//! Deliberately simple and slow: it exists to cross-check the iterative
//! refiner, not to be fast.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::geom::{yaw_rotation, CameraIntrinsics, Point2, Point3, Pose};

use super::{reprojection_error, PoseSolution};

/// Best translation for a fixed yaw from the algebraic constraints
/// `fx*X + (cx-u)*Z = 0` rows, plus the resulting geometric RMSE.
fn solve_translation(
    points3: &[Point3],
    points2: &[Point2],
    k: &CameraIntrinsics,
    yaw: f64,
) -> Option<(Vector3<f64>, f64)> {
    let n = points3.len();
    let r = yaw_rotation(yaw);
    let mut a = DMatrix::zeros(2 * n, 3);
    let mut b = DVector::zeros(2 * n);
    for (i, (p, q)) in points3.iter().zip(points2).enumerate() {
        let rp = r * Vector3::from(*p);
        a[(2 * i, 0)] = k.fx;
        a[(2 * i, 2)] = k.cx - q[0];
        b[2 * i] = (q[0] - k.cx) * rp.z - k.fx * rp.x;
        a[(2 * i + 1, 1)] = k.fy;
        a[(2 * i + 1, 2)] = k.cy - q[1];
        b[2 * i + 1] = (q[1] - k.cy) * rp.z - k.fy * rp.y;
    }
    let t = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let pose = Pose::new(yaw, [t[0], t[1], t[2]]);
    let rmse = reprojection_error(k, &pose, points3, points2).ok()?;
    Some((Vector3::new(t[0], t[1], t[2]), rmse))
}

/// Grid-search pose recovery with `yaw_step` radians between samples.
///
/// Always returns the best pose found; if no yaw admits a valid-depth
/// translation the reported RMSE is infinite.
pub fn solve_pose_oracle(
    points3: &[Point3],
    points2: &[Point2],
    k: &CameraIntrinsics,
    yaw_step: f64,
) -> PoseSolution {
    assert!(yaw_step > 0.0, "yaw_step must be positive");
    let tau = 2.0 * std::f64::consts::PI;
    let steps = (tau / yaw_step).ceil().max(1.0) as usize;
    // Node spacing after rounding the count up; covers (-pi, pi] exactly.
    let step = tau / steps as f64;
    let mut best: Option<(f64, Vector3<f64>, f64)> = None;
    let mut evals = 0usize;
    let score_at = |yaw: f64| solve_translation(points3, points2, k, yaw);
    for i in 0..steps {
        let yaw = -std::f64::consts::PI + (i as f64 + 1.0) * step;
        evals += 1;
        if let Some((t, rmse)) = score_at(yaw) {
            if best.as_ref().map_or(true, |b| rmse < b.2) {
                best = Some((yaw, t, rmse));
            }
        }
    }
    let Some((best_yaw, mut best_t, mut best_rmse)) = best else {
        return PoseSolution {
            pose: Pose::new(0.0, [0.0, 0.0, 1.0]),
            iterations: evals,
            reproj_rmse: f64::INFINITY,
            converged: false,
        };
    };
    let mut final_yaw = best_yaw;
    // Parabolic sharpening on (rmse vs yaw) around the winning node, with
    // wraparound neighbours. Falls back to the raw grid value when the
    // local model is not convex.
    let neighbor = |yaw: f64| score_at(yaw).map(|(_, rmse)| rmse);
    if let (Some(f_m), Some(f_p)) = (neighbor(best_yaw - step), neighbor(best_yaw + step)) {
        evals += 2;
        let denom = f_m - 2.0 * best_rmse + f_p;
        if denom > 0.0 {
            let offset = 0.5 * (f_m - f_p) / denom;
            if offset.abs() <= 1.0 {
                let cand = best_yaw + offset * step;
                if let Some((t, rmse)) = score_at(cand) {
                    if rmse < best_rmse {
                        final_yaw = cand;
                        best_t = t;
                        best_rmse = rmse;
                    }
                }
            }
        }
    }
    PoseSolution {
        pose: Pose::new(final_yaw, [best_t.x, best_t.y, best_t.z]),
        iterations: evals,
        reproj_rmse: best_rmse,
        converged: true,
    }
}
