//! Pose recovery from matched 2D part locations and a 3D shape.
//!
//! The production path is yaw-constrained: vehicles sit upright, so only
//! heading and translation are estimated. An unconstrained 6-DoF linear
//! initializer ([`epnp::solve_epnp`]) seeds an iterative refiner
//! ([`refine::refine_yaw_pose`]) on the yaw manifold; a brute-force grid
//! solver ([`oracle::solve_pose_oracle`]) serves as an independent
//! reference implementation for validation.

pub mod epnp;
pub mod oracle;
pub mod refine;

use serde::{Deserialize, Serialize};

use crate::geom::{project_point, CameraIntrinsics, GeomError, Point2, Point3, Pose};

pub use epnp::{solve_epnp, yaw_from_rotation, EpnpSolution, MIN_POINTS_FULL};
pub use oracle::solve_pose_oracle;
pub use refine::{jacobian_residuals, refine_yaw_pose};

/// Failure modes of pose recovery.
///
/// Non-convergence of the iterative refiner is *not* an error: the refiner
/// returns its best pose with `converged: false` so callers can decide
/// whether to keep it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    /// The correspondences cannot constrain a pose: too few points,
    /// mismatched input lengths, (near-)coplanar shape, or observations
    /// that leave the linear system rank-deficient.
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    /// Every candidate pose placed at least one point at or behind the
    /// camera plane.
    #[error("all candidate poses place shape points behind the camera")]
    BehindCamera,
    /// The initial pose handed to the refiner already has a point at
    /// non-positive depth, so residuals are undefined from the start.
    #[error("initial pose places point {index} at depth {z}")]
    DegenerateDepth { index: usize, z: f64 },
}

/// Which pose parameterization to solve for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PnPMode {
    /// Heading plus translation (the vehicle assumption). Default.
    YawConstrained,
    /// Unconstrained rotation from the linear initializer alone; the
    /// returned pose keeps only the yaw component of the rotation.
    Full6Dof,
}

/// Options for [`solve_pose`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PnPOptions {
    pub mode: PnPMode,
    /// Iteration cap for the refiner.
    pub max_iters: usize,
    /// Parameter-step convergence threshold.
    pub tol: f64,
    /// Minimum usable correspondences; defaults to 4 for yaw-constrained
    /// solves and is raised to 6 internally whenever the unconstrained
    /// initializer must run.
    pub min_points: usize,
}

impl Default for PnPOptions {
    fn default() -> Self {
        Self { mode: PnPMode::YawConstrained, max_iters: 50, tol: 1e-10, min_points: 4 }
    }
}

impl PnPOptions {
    /// Options for an unconstrained solve.
    pub fn full_6dof() -> Self {
        Self { mode: PnPMode::Full6Dof, min_points: MIN_POINTS_FULL, ..Self::default() }
    }
}

/// A recovered pose with solver diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseSolution {
    pub pose: Pose,
    /// Refiner iterations (grid evaluations for the reference solver).
    pub iterations: usize,
    /// Root-mean-square reprojection error of `pose` in pixels.
    pub reproj_rmse: f64,
    /// Whether the parameter step dropped below tolerance before the
    /// iteration cap.
    pub converged: bool,
}

/// Root-mean-square pixel distance between projected shape points and
/// their observations. Fails when a point has non-positive depth.
pub fn reprojection_error(
    k: &CameraIntrinsics,
    pose: &Pose,
    points3: &[Point3],
    points2: &[Point2],
) -> Result<f64, GeomError> {
    assert_eq!(points3.len(), points2.len(), "mismatched correspondence lists");
    assert!(!points3.is_empty(), "no correspondences");
    let mut acc = 0.0;
    for (p, q) in points3.iter().zip(points2) {
        let proj = project_point(k, pose, *p)?;
        acc += (proj[0] - q[0]).powi(2) + (proj[1] - q[1]).powi(2);
    }
    Ok((acc / points3.len() as f64).sqrt())
}

/// Recovers the pose that best reprojects `points3` onto `points2`.
///
/// Yaw-constrained mode seeds the refiner from the unconstrained linear
/// initializer when at least six correspondences are available, and from a
/// coarse yaw grid otherwise (down to `min_points`). Because a projected
/// initialization can land near the wrong end of a heading ambiguity, the
/// refiner is also started from the half-turn flip of the seed and the
/// lower-error local optimum wins.
pub fn solve_pose(
    points3: &[Point3],
    points2: &[Point2],
    k: &CameraIntrinsics,
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
    if n < opts.min_points {
        return Err(PoseError::DegenerateConfiguration(format!(
            "{n} correspondences; configured minimum is {}",
            opts.min_points
        )));
    }
    // Observations with no 2D spread leave depth unconstrained; refuse
    // rather than chase the pose off to infinity.
    let mut min_u = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for q in points2 {
        min_u = min_u.min(q[0]);
        max_u = max_u.max(q[0]);
        min_v = min_v.min(q[1]);
        max_v = max_v.max(q[1]);
    }
    if max_u - min_u <= 1e-9 && max_v - min_v <= 1e-9 {
        return Err(PoseError::DegenerateConfiguration(
            "observations collapse to a single pixel".into(),
        ));
    }
    match opts.mode {
        PnPMode::Full6Dof => {
            let sol = solve_epnp(points3, points2, k)?;
            let pose = Pose::new(yaw_from_rotation(&sol.rotation), sol.t);
            // Report the fit of the returned (yaw-projected) pose, not of
            // the internal full rotation.
            let rmse = reprojection_error(k, &pose, points3, points2)
                .map_err(|_| PoseError::BehindCamera)?;
            Ok(PoseSolution { pose, iterations: 0, reproj_rmse: rmse, converged: true })
        }
        PnPMode::YawConstrained => {
            let seed = if n >= MIN_POINTS_FULL {
                match solve_epnp(points3, points2, k) {
                    Ok(sol) => Pose::new(yaw_from_rotation(&sol.rotation), sol.t),
                    // Fall back to the coarse grid rather than giving up:
                    // the initializer needs a richer geometry than the
                    // yaw-constrained problem itself does.
                    Err(PoseError::DegenerateConfiguration(_)) | Err(PoseError::BehindCamera) => {
                        coarse_seed(points3, points2, k)?
                    }
                    Err(e) => return Err(e),
                }
            } else {
                coarse_seed(points3, points2, k)?
            };
            let mut best: Option<PoseSolution> = None;
            for flip in [0.0, std::f64::consts::PI] {
                let init = Pose::new(seed.yaw + flip, seed.t);
                let Ok(sol) = refine_yaw_pose(points3, points2, k, &init, opts) else {
                    continue;
                };
                if best.as_ref().map_or(true, |b| sol.reproj_rmse < b.reproj_rmse) {
                    best = Some(sol);
                }
            }
            best.ok_or(PoseError::BehindCamera)
        }
    }
}

/// Cheap grid initialization for configurations too small for the linear
/// initializer: a 5-degree yaw sweep with per-yaw least-squares translation.
fn coarse_seed(
    points3: &[Point3],
    points2: &[Point2],
    k: &CameraIntrinsics,
) -> Result<Pose, PoseError> {
    let sol = solve_pose_oracle(points3, points2, k, 5.0f64.to_radians());
    if sol.reproj_rmse.is_finite() {
        Ok(sol.pose)
    } else {
        Err(PoseError::BehindCamera)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::normalize_angle;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics { fx: 721.5, fy: 721.5, cx: 609.6, cy: 172.9, img_w: 1242, img_h: 375 }
    }

    fn asymmetric_shape(rng: &mut impl Rng) -> Vec<Point3> {
        // Random cloud plus a deliberate front/rear asymmetry so a half-turn
        // flip cannot reproject equally well.
        let mut pts: Vec<Point3> = (0..16)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-0.7..0.7), rng.gen_range(-0.9..0.9)])
            .collect();
        pts.push([2.6, -0.9, 0.0]);
        pts.push([-2.6, 0.4, 0.5]);
        pts
    }

    fn observe(k: &CameraIntrinsics, pose: &Pose, pts: &[Point3]) -> Vec<Point2> {
        pts.iter().map(|p| project_point(k, pose, *p).unwrap()).collect()
    }

    #[test]
    fn yaw_constrained_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..40 {
            let pts = asymmetric_shape(&mut rng);
            let gt = Pose::new(rng.gen_range(-3.1..3.1), [
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(5.0..50.0),
            ]);
            let obs = observe(&cam(), &gt, &pts);
            let sol = solve_pose(&pts, &obs, &cam(), &PnPOptions::default()).unwrap();
            assert!(sol.converged);
            let yaw_err = normalize_angle(sol.pose.yaw - gt.yaw).abs();
            assert!(yaw_err < 1e-7, "yaw err {yaw_err}");
            for a in 0..3 {
                assert!((sol.pose.t[a] - gt.t[a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn five_points_use_the_grid_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..5 {
            let pts: Vec<Point3> = vec![
                [2.1, -0.5, 0.0],
                [-1.9, 0.6, 0.4],
                [0.3, 0.1, -0.8],
                [1.0, 0.6, 0.7],
                [-0.8, -0.6, -0.2],
            ];
            let gt = Pose::new(rng.gen_range(-3.0..3.0), [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(8.0..25.0),
            ]);
            let obs = observe(&cam(), &gt, &pts);
            let sol = solve_pose(&pts, &obs, &cam(), &PnPOptions::default()).unwrap();
            let yaw_err = normalize_angle(sol.pose.yaw - gt.yaw).abs();
            assert!(yaw_err < 1e-6, "yaw err {yaw_err}");
        }
    }

    #[test]
    fn collapsed_observations_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let pts = asymmetric_shape(&mut rng);
        let obs = vec![[500.0, 200.0]; pts.len()];
        assert!(matches!(
            solve_pose(&pts, &obs, &cam(), &PnPOptions::default()),
            Err(PoseError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn below_minimum_points_is_degenerate() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let obs = vec![[600.0, 170.0], [650.0, 170.0], [600.0, 220.0]];
        assert!(matches!(
            solve_pose(&pts, &obs, &cam(), &PnPOptions::default()),
            Err(PoseError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn full_6dof_mode_reports_yaw_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let pts = asymmetric_shape(&mut rng);
        let gt = Pose::new(1.1, [0.5, 0.2, 18.0]);
        let obs = observe(&cam(), &gt, &pts);
        let sol = solve_pose(&pts, &obs, &cam(), &PnPOptions::full_6dof()).unwrap();
        assert!(normalize_angle(sol.pose.yaw - gt.yaw).abs() < 1e-6);
        assert!(sol.reproj_rmse < 1e-5);
    }

    #[test]
    fn reprojection_error_zero_at_ground_truth() {
        let pts = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let pose = Pose::new(0.3, [0.0, 0.0, 12.0]);
        let obs = observe(&cam(), &pose, &pts);
        let rmse = reprojection_error(&cam(), &pose, &pts, &obs).unwrap();
        assert!(rmse < 1e-12);
    }

    #[test]
    fn equivariance_under_yaw_offset() {
        // Rotating the observations' generating pose rotates the answer.
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let pts = asymmetric_shape(&mut rng);
        let base = Pose::new(0.4, [1.0, 0.0, 20.0]);
        let obs = observe(&cam(), &base, &pts);
        let sol_a = solve_pose(&pts, &obs, &cam(), &PnPOptions::default()).unwrap();
        let offset = 0.9;
        let shifted = Pose::new(base.yaw + offset, base.t);
        let obs_b = observe(&cam(), &shifted, &pts);
        let sol_b = solve_pose(&pts, &obs_b, &cam(), &PnPOptions::default()).unwrap();
        assert!(normalize_angle(sol_b.pose.yaw - sol_a.pose.yaw - offset).abs() < 1e-7);
    }
}
