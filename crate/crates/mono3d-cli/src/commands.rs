//! The six subcommand implementations.
//!
//! Batch stages fan out per image with rayon and stitch results back in
//! image order, so parallel runs stay byte-identical to sequential ones.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use mono3d::annotate::{
    generate_ground_truth, AnnotationOptions, Scene, VehicleGT, WeakAnnotation,
};
use mono3d::codec::check_all_losses;
use mono3d::geom::{normalize_angle, project_point, Box3D, Point2, Pose};
use mono3d::infer::{run_inference, DetectionRecord, InferenceConfig, ResultRecord};
use mono3d::metrics::{evaluate, MetricsReport};
use mono3d::pose::solve_pose;
use mono3d::sim::records::{
    read_records, write_records, RecordKind, RecordsFile, RecordsHeader,
};
use mono3d::sim::{generate_scene, gt_to_records, perturb_records, SimError};

use crate::config::RunConfig;
use crate::CliError;

/// Seed for image `i` of a batch: consecutive stream seeds, so any single
/// image can be regenerated on its own.
fn image_seed(master: u64, image: usize) -> u64 {
    master.wrapping_add(image as u64)
}

/// Noise draws come from a stream decorrelated from placement, so turning
/// noise on never changes the underlying scenes.
fn noise_seed(master: u64, image: usize) -> u64 {
    image_seed(master, image) ^ 0x9E37_79B9_7F4A_7C15
}

fn ensure_out(cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::runtime(format!("creating {}: {e}", cfg.out.display())))
}

fn read_in<T: DeserializeOwned>(path: &Path, kind: RecordKind) -> Result<RecordsFile<T>, CliError> {
    read_records(path, kind)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn write_out<T: Serialize>(
    cfg: &RunConfig,
    name: &str,
    header: &RecordsHeader,
    items: &[(usize, T)],
) -> Result<PathBuf, CliError> {
    let path = cfg.out.join(name);
    write_records(&path, header, items)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

fn write_text(cfg: &RunConfig, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = cfg.out.join(name);
    fs::write(&path, text)
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

/// Tags per-image lists with their image index for the records format.
fn flatten<T>(per_image: Vec<Vec<T>>) -> Vec<(usize, T)> {
    per_image
        .into_iter()
        .enumerate()
        .flat_map(|(image, items)| items.into_iter().map(move |item| (image, item)))
        .collect()
}

pub fn synth(cfg: &RunConfig, images: usize) -> Result<(), CliError> {
    if images == 0 {
        return Err(CliError::validation("--images must be at least 1"));
    }
    let bank = cfg.resolve_bank()?;
    let camera = cfg.resolve_camera()?;
    let generated: Result<Vec<_>, CliError> = (0..images)
        .into_par_iter()
        .map(|image| {
            let mut spec = cfg.scene.clone();
            spec.seed = image_seed(cfg.seed, image);
            let scene = generate_scene(&spec, &bank, &camera).map_err(|e| match e {
                SimError::InvalidSpec(_) => CliError::validation(e.to_string()),
                other => CliError::runtime(other.to_string()),
            })?;
            let weak: Vec<WeakAnnotation> = scene
                .vehicles
                .iter()
                .map(|v| WeakAnnotation {
                    box3d: Box3D { center: v.pose.t, yaw: v.pose.yaw, template: v.template },
                })
                .collect();
            let gts = generate_ground_truth(&scene, &AnnotationOptions::default())
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let ideal = gt_to_records(&gts, &bank).map_err(|e| CliError::runtime(e.to_string()))?;
            let noisy = perturb_records(&ideal, &cfg.noise, noise_seed(cfg.seed, image))
                .map_err(|e| CliError::runtime(e.to_string()))?;
            Ok((weak, gts, noisy))
        })
        .collect();
    let mut weak_images = Vec::with_capacity(images);
    let mut gt_images = Vec::with_capacity(images);
    let mut det_images = Vec::with_capacity(images);
    for (weak, gts, dets) in generated? {
        weak_images.push(weak);
        gt_images.push(gts);
        det_images.push(dets);
    }
    let n_vehicles: usize = weak_images.iter().map(Vec::len).sum();
    let n_gt: usize = gt_images.iter().map(Vec::len).sum();

    ensure_out(cfg)?;
    let header = |kind| RecordsHeader {
        kind,
        seed: cfg.seed,
        n_parts: bank.n_parts,
        n_models: bank.models.len(),
    };
    write_out(cfg, "weak_boxes.jsonl", &header(RecordKind::WeakBoxes), &flatten(weak_images))?;
    write_out(cfg, "ground_truth.jsonl", &header(RecordKind::GroundTruth), &flatten(gt_images))?;
    write_out(cfg, "detections.jsonl", &header(RecordKind::Detections), &flatten(det_images))?;
    println!(
        "synth: seed {}, {images} images, {n_vehicles} vehicles ({n_gt} in frame) -> {}",
        cfg.seed,
        cfg.out.display()
    );
    Ok(())
}

pub fn annotate(cfg: &RunConfig, input: &Path) -> Result<(), CliError> {
    let bank = cfg.resolve_bank()?;
    let camera = cfg.resolve_camera()?;
    let file: RecordsFile<WeakAnnotation> = read_in(input, RecordKind::WeakBoxes)?;
    let seed = file.header.seed;
    let images = file.group_by_image();
    let gts: Result<Vec<Vec<VehicleGT>>, CliError> = images
        .par_iter()
        .map(|annotations| {
            let scene = Scene::build(&bank, &camera, annotations);
            generate_ground_truth(&scene, &AnnotationOptions::default())
                .map_err(|e| CliError::runtime(e.to_string()))
        })
        .collect();
    let gts = gts?;
    let n_gt: usize = gts.iter().map(Vec::len).sum();

    ensure_out(cfg)?;
    let header = RecordsHeader {
        kind: RecordKind::GroundTruth,
        seed,
        n_parts: bank.n_parts,
        n_models: bank.models.len(),
    };
    let path = write_out(cfg, "ground_truth.jsonl", &header, &flatten(gts))?;
    println!("annotate: {} images, {n_gt} vehicles -> {}", images.len(), path.display());
    Ok(())
}

pub fn infer(cfg: &RunConfig, input: &Path) -> Result<(), CliError> {
    let bank = cfg.resolve_bank()?;
    let camera = cfg.resolve_camera()?;
    let file: RecordsFile<DetectionRecord> = read_in(input, RecordKind::Detections)?;
    if file.header.n_parts != bank.n_parts {
        return Err(CliError::validation(format!(
            "records carry {} parts per vehicle, the bank expects {}",
            file.header.n_parts, bank.n_parts
        )));
    }
    if file.header.n_models != bank.models.len() {
        return Err(CliError::validation(format!(
            "records carry {} template rows, the bank has {} models",
            file.header.n_models,
            bank.models.len()
        )));
    }
    if let Some((image, _)) = file.items.iter().find(|(_, r)| !r.score.is_finite()) {
        return Err(CliError::validation(format!(
            "image {image} holds a detection with a non-finite score"
        )));
    }
    let seed = file.header.seed;
    let images = file.group_by_image();
    let n_in: usize = images.iter().map(Vec::len).sum();
    let infer_cfg = InferenceConfig {
        score_cap: cfg.score_cap,
        nms_threshold: cfg.nms,
        pnp: cfg.pnp.clone(),
    };
    let results: Vec<Vec<ResultRecord>> = images
        .par_iter()
        .map(|records| run_inference(records, &bank, &camera, &infer_cfg))
        .collect();
    let n_out: usize = results.iter().map(Vec::len).sum();

    ensure_out(cfg)?;
    let header = RecordsHeader {
        kind: RecordKind::Results,
        seed,
        n_parts: bank.n_parts,
        n_models: bank.models.len(),
    };
    let path = write_out(cfg, "results.jsonl", &header, &flatten(results))?;
    println!(
        "infer: {} images, {n_in} detections -> {n_out} results, {}",
        images.len(),
        path.display()
    );
    Ok(())
}

/// Schema of `metrics.json`: the effective configuration plus the seven
/// metrics and the evaluated counts, flattened to one object.
#[derive(Serialize)]
struct MetricsJson<'a> {
    config: &'a RunConfig,
    #[serde(flatten)]
    metrics: &'a MetricsReport,
}

fn render_metrics(report: &MetricsReport, cfg: &RunConfig) -> String {
    let mut s = String::new();
    writeln!(s, "detection    AP             {:.4}", report.ap).unwrap();
    writeln!(s, "heading      AOS            {:.4}", report.aos).unwrap();
    for (key, value) in &report.alp {
        writeln!(s, "location     ALP@{key}m       {value:.4}").unwrap();
    }
    writeln!(s, "parts        localization   {:.4}", report.part_loc).unwrap();
    writeln!(s, "visibility   accuracy       {:.4}", report.vis_acc).unwrap();
    writeln!(s, "template     accuracy       {:.4}", report.template_acc).unwrap();
    writeln!(
        s,
        "counts       {} images, {} ground truth, {} detections",
        report.n_images, report.n_gt, report.n_det
    )
    .unwrap();
    let config =
        serde_json::to_string(cfg).expect("config serialization cannot fail");
    writeln!(s, "config       {config}").unwrap();
    s
}

pub fn eval(cfg: &RunConfig, dets_path: &Path, gt_path: &Path) -> Result<(), CliError> {
    let dets_file: RecordsFile<ResultRecord> = read_in(dets_path, RecordKind::Results)?;
    let gt_file: RecordsFile<VehicleGT> = read_in(gt_path, RecordKind::GroundTruth)?;
    if dets_file.header.n_parts != gt_file.header.n_parts {
        return Err(CliError::validation(format!(
            "results carry {} parts per vehicle, ground truth carries {}",
            dets_file.header.n_parts, gt_file.header.n_parts
        )));
    }
    if let Some((image, _)) = dets_file.items.iter().find(|(_, r)| !r.score.is_finite()) {
        return Err(CliError::validation(format!(
            "image {image} holds a result with a non-finite score"
        )));
    }
    let mut dets = dets_file.group_by_image();
    let mut gts = gt_file.group_by_image();
    // Trailing images present on only one side still count on the other.
    let n_images = dets.len().max(gts.len());
    dets.resize_with(n_images, Vec::new);
    gts.resize_with(n_images, Vec::new);

    let report = evaluate(&dets, &gts, &cfg.eval);
    let text = render_metrics(&report, cfg);
    print!("{text}");
    ensure_out(cfg)?;
    let mut json = serde_json::to_string_pretty(&MetricsJson { config: cfg, metrics: &report })
        .expect("metrics serialization cannot fail");
    json.push('\n');
    write_text(cfg, "metrics.json", &json)?;
    write_text(cfg, "metrics.txt", &text)?;
    Ok(())
}

pub fn check_grad(cfg: &RunConfig, points: usize, step: f64, tol: f64) -> Result<(), CliError> {
    if points == 0 {
        return Err(CliError::validation("--points must be at least 1"));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(CliError::validation(format!("--step must be positive, got {step}")));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::validation(format!("--tol must be positive, got {tol}")));
    }
    let report = check_all_losses(cfg.seed, points, step);
    let mut text = String::new();
    writeln!(text, "gradient check: seed {}, step {step:e}, tolerance {tol:e}", cfg.seed).unwrap();
    for check in &report.checks {
        writeln!(
            text,
            "  {:<12} max rel err {:.3e}  ({} points)",
            check.loss, check.max_error, check.n_points
        )
        .unwrap();
    }
    writeln!(
        text,
        "  overall max {:.3e}, gated gradients {}",
        report.max_error,
        if report.gating_exact { "exactly zero" } else { "LEAKING" }
    )
    .unwrap();
    print!("{text}");
    ensure_out(cfg)?;
    let mut json =
        serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
    json.push('\n');
    write_text(cfg, "gradcheck.json", &json)?;
    if report.max_error < tol && report.gating_exact {
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "gradient check failed: max error {:.3e} against tolerance {tol:e}, gating {}",
            report.max_error,
            if report.gating_exact { "exact" } else { "leaking" }
        )))
    }
}

#[derive(Serialize)]
struct Quantiles {
    median: f64,
    p95: f64,
    max: f64,
}

/// Order statistics by nearest-rank; `values` must be non-empty.
fn quantiles(values: &mut [f64]) -> Quantiles {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
    let pick = |q: f64| values[((values.len() - 1) as f64 * q).round() as usize];
    Quantiles { median: pick(0.5), p95: pick(0.95), max: values[values.len() - 1] }
}

/// Schema of `bench_pose.json`. Accuracy numbers replay exactly from the
/// seed; solve times are wall-clock and vary run to run.
#[derive(Serialize)]
struct BenchReport {
    seed: u64,
    trials: usize,
    solved: usize,
    converged: usize,
    yaw_err_deg: Quantiles,
    translation_err_m: Quantiles,
    reproj_rmse_px: Quantiles,
    solve_ms: Quantiles,
}

pub fn bench_pose(cfg: &RunConfig, trials: usize) -> Result<(), CliError> {
    if trials == 0 {
        return Err(CliError::validation("--trials must be at least 1"));
    }
    let bank = cfg.resolve_bank()?;
    let camera = cfg.resolve_camera()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = if cfg.noise.part_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise.part_sigma).expect("validated sigma"))
    } else {
        None
    };
    let mut yaw_errs = Vec::with_capacity(trials);
    let mut trans_errs = Vec::with_capacity(trials);
    let mut rmses = Vec::with_capacity(trials);
    let mut times = Vec::with_capacity(trials);
    let mut converged = 0usize;
    for _ in 0..trials {
        // A random bank vehicle inside the configured scene volume.
        let model = &bank.models[rng.gen_range(0..bank.models.len())];
        let z = rng.gen_range(cfg.scene.depth_min..=cfg.scene.depth_max);
        let x_lo = (0.0 - camera.cx) / camera.fx * z * cfg.scene.lateral_margin;
        let x_hi = (camera.img_w as f64 - camera.cx) / camera.fx * z * cfg.scene.lateral_margin;
        let x = rng.gen_range(x_lo..=x_hi);
        let y = cfg.scene.camera_height - model.template.h / 2.0;
        let yaw = rng.gen_range(cfg.scene.yaw_min..=cfg.scene.yaw_max);
        let pose = Pose::new(yaw, [x, y, z]);
        let points3 = &model.parts.points;
        let mut points2: Vec<Point2> = Vec::with_capacity(points3.len());
        for &p in points3 {
            points2.push(
                project_point(&camera, &pose, p)
                    .map_err(|e| CliError::runtime(format!("projecting a sampled pose: {e}")))?,
            );
        }
        if let Some(g) = &gauss {
            for uv in &mut points2 {
                uv[0] += g.sample(&mut rng);
                uv[1] += g.sample(&mut rng);
            }
        }
        let start = Instant::now();
        let solution = solve_pose(points3, &points2, &camera, &cfg.pnp);
        times.push(start.elapsed().as_secs_f64() * 1e3);
        match solution {
            Ok(sol) => {
                converged += usize::from(sol.converged);
                yaw_errs.push(normalize_angle(sol.pose.yaw - pose.yaw).abs().to_degrees());
                let d = [
                    sol.pose.t[0] - pose.t[0],
                    sol.pose.t[1] - pose.t[1],
                    sol.pose.t[2] - pose.t[2],
                ];
                trans_errs.push((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
                rmses.push(sol.reproj_rmse);
            }
            Err(err) => log::warn!("pose trial failed: {err}"),
        }
    }
    if yaw_errs.is_empty() {
        return Err(CliError::runtime("no pose trial produced a solution"));
    }
    let report = BenchReport {
        seed: cfg.seed,
        trials,
        solved: yaw_errs.len(),
        converged,
        yaw_err_deg: quantiles(&mut yaw_errs),
        translation_err_m: quantiles(&mut trans_errs),
        reproj_rmse_px: quantiles(&mut rmses),
        solve_ms: quantiles(&mut times),
    };
    let mut text = String::new();
    writeln!(
        text,
        "pose benchmark: seed {}, {} trials, {} solved, {} converged",
        report.seed, report.trials, report.solved, report.converged
    )
    .unwrap();
    writeln!(
        text,
        "  yaw error    median {:.4} deg   p95 {:.4} deg   max {:.4} deg",
        report.yaw_err_deg.median, report.yaw_err_deg.p95, report.yaw_err_deg.max
    )
    .unwrap();
    writeln!(
        text,
        "  translation  median {:.4} m     p95 {:.4} m     max {:.4} m",
        report.translation_err_m.median, report.translation_err_m.p95, report.translation_err_m.max
    )
    .unwrap();
    writeln!(
        text,
        "  reproj rmse  median {:.4} px    p95 {:.4} px    max {:.4} px",
        report.reproj_rmse_px.median, report.reproj_rmse_px.p95, report.reproj_rmse_px.max
    )
    .unwrap();
    writeln!(
        text,
        "  solve time   median {:.3} ms    p95 {:.3} ms    max {:.3} ms",
        report.solve_ms.median, report.solve_ms.p95, report.solve_ms.max
    )
    .unwrap();
    print!("{text}");
    ensure_out(cfg)?;
    let mut json =
        serde_json::to_string_pretty(&report).expect("report serialization cannot fail");
    json.push('\n');
    write_text(cfg, "bench_pose.json", &json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_seeds_are_distinct_and_replayable() {
        assert_eq!(image_seed(7, 0), 7);
        assert_ne!(image_seed(7, 1), image_seed(7, 2));
        assert_ne!(noise_seed(7, 0), image_seed(7, 0));
        assert_eq!(noise_seed(7, 3), noise_seed(7, 3));
    }

    #[test]
    fn flatten_tags_images_in_order() {
        let flat = flatten(vec![vec!["a"], vec![], vec!["b", "c"]]);
        assert_eq!(flat, vec![(0, "a"), (2, "b"), (2, "c")]);
    }

    #[test]
    fn quantiles_pick_nearest_rank() {
        let mut v = vec![3.0, 1.0, 2.0, 4.0, 5.0];
        let q = quantiles(&mut v);
        assert_eq!(q.median, 3.0);
        assert_eq!(q.p95, 5.0);
        assert_eq!(q.max, 5.0);
    }
}
