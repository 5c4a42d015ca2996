//! Damped Gauss-Newton refinement of a yaw-constrained pose.
//!
//! Parameters are `(yaw, tx, ty, tz)`. Each iteration linearizes the pixel
//! residuals, solves the normal equations, and falls back to Levenberg
//! damping whenever the plain step fails to reduce the cost or drives a
//! point to a non-positive depth.

use nalgebra::{Matrix4, Vector4};

use crate::geom::{transform_point, CameraIntrinsics, Point2, Point3, Pose, MIN_DEPTH};

use super::{PnPOptions, PoseError, PoseSolution};

/// Pixel residuals and their Jacobian with respect to `(yaw, tx, ty, tz)`.
///
/// Rows come in (u, v) pairs per correspondence. Returns `None` when any
/// point has depth at or below the valid minimum under `pose`.
pub fn jacobian_residuals(
    points3: &[Point3],
    points2: &[Point2],
    k: &CameraIntrinsics,
    pose: &Pose,
) -> Option<(nalgebra::DMatrix<f64>, nalgebra::DVector<f64>)> {
    let n = points3.len();
    let mut jac = nalgebra::DMatrix::zeros(2 * n, 4);
    let mut res = nalgebra::DVector::zeros(2 * n);
    let (s, c) = pose.yaw.sin_cos();
    for (i, (p, q)) in points3.iter().zip(points2).enumerate() {
        let pc = transform_point(pose, *p);
        let [x, y, z] = pc;
        if z <= MIN_DEPTH {
            return None;
        }
        let inv_z = 1.0 / z;
        // Derivatives of the rotated point with respect to yaw.
        let dx_dyaw = -s * p[0] + c * p[2];
        let dz_dyaw = -c * p[0] - s * p[2];
        let u = k.fx * x * inv_z + k.cx;
        let v = k.fy * y * inv_z + k.cy;
        res[2 * i] = u - q[0];
        res[2 * i + 1] = v - q[1];
        jac[(2 * i, 0)] = k.fx * inv_z * dx_dyaw - k.fx * x * inv_z * inv_z * dz_dyaw;
        jac[(2 * i, 1)] = k.fx * inv_z;
        jac[(2 * i, 3)] = -k.fx * x * inv_z * inv_z;
        jac[(2 * i + 1, 0)] = -k.fy * y * inv_z * inv_z * dz_dyaw;
        jac[(2 * i + 1, 2)] = k.fy * inv_z;
        jac[(2 * i + 1, 3)] = -k.fy * y * inv_z * inv_z;
    }
    Some((jac, res))
}

fn cost(points3: &[Point3], points2: &[Point2], k: &CameraIntrinsics, pose: &Pose) -> Option<f64> {
    let mut acc = 0.0;
    for (p, q) in points3.iter().zip(points2) {
        let [x, y, z] = transform_point(pose, *p);
        if z <= MIN_DEPTH {
            return None;
        }
        let u = k.fx * x / z + k.cx;
        let v = k.fy * y / z + k.cy;
        acc += (u - q[0]).powi(2) + (v - q[1]).powi(2);
    }
    Some(acc)
}

/// Refines `init` against the observations.
///
/// Terminates as converged when an accepted step's parameter update drops
/// below `opts.tol`; otherwise runs for `opts.max_iters` iterations and
/// reports `converged: false` in the returned solution. The error cases are
/// structural: mismatched input lengths or fewer than two correspondences,
/// and an initial pose that already places a point at non-positive depth.
pub fn refine_yaw_pose(
    points3: &[Point3],
    points2: &[Point2],
    k: &CameraIntrinsics,
    init: &Pose,
    opts: &PnPOptions,
) -> Result<PoseSolution, PoseError> {
    let n = points3.len();
    if n != points2.len() {
        return Err(PoseError::DegenerateConfiguration(format!(
            "{} 3D points vs {} 2D points",
            n,
            points2.len()
        )));
    }
    if n < 2 {
        return Err(PoseError::DegenerateConfiguration(format!(
            "{n} correspondences; yaw refinement needs at least 2"
        )));
    }
    let mut pose = Pose::new(init.yaw, init.t);
    let mut current_cost = cost(points3, points2, k, &pose).ok_or(PoseError::DegenerateDepth {
        index: first_bad_depth(points3, &pose),
        z: depth_at(points3, &pose, first_bad_depth(points3, &pose)),
    })?;
    let mut lambda = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iters {
        let (jac, res) = match jacobian_residuals(points3, points2, k, &pose) {
            Some(v) => v,
            // The accepted pose was valid a moment ago; treat a vanishing
            // depth here as a stall rather than an error.
            None => break,
        };
        let h = jac.transpose() * &jac;
        let g = jac.transpose() * &res;
        let mut accepted = false;
        let mut step_norm = 0.0;
        // Inner damping loop: retry with stronger regularization until the
        // step reduces the cost or damping saturates.
        for _ in 0..32 {
            let mut h_damped = Matrix4::zeros();
            for r in 0..4 {
                for cidx in 0..4 {
                    h_damped[(r, cidx)] = h[(r, cidx)];
                }
                h_damped[(r, r)] += lambda * h[(r, r)].max(1e-12);
            }
            let delta = match h_damped.cholesky() {
                Some(ch) => ch.solve(&Vector4::new(g[0], g[1], g[2], g[3])),
                None => {
                    lambda = (lambda * 10.0).max(1e-4);
                    continue;
                }
            };
            let trial = Pose::new(
                pose.yaw - delta[0],
                [pose.t[0] - delta[1], pose.t[1] - delta[2], pose.t[2] - delta[3]],
            );
            match cost(points3, points2, k, &trial) {
                Some(c) if c <= current_cost => {
                    pose = trial;
                    current_cost = c;
                    step_norm = delta.norm();
                    lambda *= 0.1;
                    if lambda < 1e-12 {
                        lambda = 0.0;
                    }
                    accepted = true;
                    break;
                }
                _ => {
                    lambda = (lambda * 10.0).max(1e-4);
                }
            }
        }
        if !accepted {
            break;
        }
        iterations += 1;
        if step_norm < opts.tol {
            converged = true;
            break;
        }
    }
    let rmse = (current_cost / n as f64).sqrt();
    Ok(PoseSolution { pose, iterations, reproj_rmse: rmse, converged })
}

fn first_bad_depth(points3: &[Point3], pose: &Pose) -> usize {
    points3
        .iter()
        .position(|p| transform_point(pose, *p)[2] <= MIN_DEPTH)
        .unwrap_or(0)
}

fn depth_at(points3: &[Point3], pose: &Pose, index: usize) -> f64 {
    transform_point(pose, points3[index])[2]
}
