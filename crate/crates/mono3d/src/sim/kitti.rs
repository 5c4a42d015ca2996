//! KITTI object-detection label and calibration ingestion.
//!
//! Label lines carry, whitespace-separated: class, truncation, occlusion,
//! alpha, 2D box corners (left top right bottom), 3D dimensions (h w l),
//! 3D location (x y z), rotation around the camera y axis, and an optional
//! trailing score. Two conversions happen on the way in:
//!
//! * the 2D box moves from corner to center/size form;
//! * the 3D location, which the format defines as the **bottom-center** of
//!   the box, moves to the centroid by subtracting half the height along
//!   +y (camera y points down). Skipping this shifts every vehicle by
//!   h/2 ≈ 0.75 m, so it is done once, here, and nowhere else.
//!
//! `DontCare` regions skip the centroid shift (their location is a
//! sentinel, not a position) and come back with `ignore` set. Writing a
//! parsed list back out reproduces the canonical text byte for byte.

use std::path::Path;

use thiserror::Error;

use crate::annotate::VehicleGT;
use crate::bank::Template3D;
use crate::geom::{Box2D, Box3D, CameraIntrinsics};

/// One label line, exactly as the file states it (corner box, bottom-center
/// location).
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub class: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
    /// Box height, width, length in meters.
    pub h: f64,
    pub w: f64,
    pub l: f64,
    /// Bottom-center of the 3D box in the camera frame.
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Yaw around camera +y; the conventions here match, so it is used
    /// directly.
    pub rotation_y: f64,
    /// Present only in result files.
    pub score: Option<f64>,
}

/// Classes lifted to vehicle ground truth by default.
pub const VEHICLE_CLASSES: [&str; 3] = ["Car", "Van", "Truck"];

pub const DONT_CARE: &str = "DontCare";

/// Ingestion settings: class filtering and the image size (KITTI calib
/// files do not state it; the common object-benchmark size is the
/// default).
#[derive(Debug, Clone, Copy)]
pub struct KittiOptions {
    /// Drop classes outside [`VEHICLE_CLASSES`] (`DontCare` is always kept
    /// as an ignore region).
    pub vehicles_only: bool,
    pub img_w: u32,
    pub img_h: u32,
}

impl Default for KittiOptions {
    fn default() -> Self {
        Self { vehicles_only: true, img_w: 1242, img_h: 375 }
    }
}

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("KITTI file I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("KITTI label line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("calibration text has no P2 projection row")]
    MissingCalib,
}

fn parse_field<T: std::str::FromStr>(
    fields: &[&str],
    idx: usize,
    line: usize,
    name: &str,
) -> Result<T, KittiError> {
    fields[idx].parse().map_err(|_| KittiError::Parse {
        line,
        message: format!("field {idx} ({name}) is not a valid {}: '{}'", std::any::type_name::<T>(), fields[idx]),
    })
}

/// Parses label text; line numbers in errors are 1-based.
pub fn parse_label_text(text: &str) -> Result<Vec<KittiLabel>, KittiError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split_whitespace().collect();
        if f.len() != 15 && f.len() != 16 {
            return Err(KittiError::Parse {
                line,
                message: format!("expected 15 or 16 fields, found {}", f.len()),
            });
        }
        out.push(KittiLabel {
            class: f[0].to_string(),
            truncation: parse_field(&f, 1, line, "truncation")?,
            occlusion: parse_field(&f, 2, line, "occlusion")?,
            alpha: parse_field(&f, 3, line, "alpha")?,
            left: parse_field(&f, 4, line, "left")?,
            top: parse_field(&f, 5, line, "top")?,
            right: parse_field(&f, 6, line, "right")?,
            bottom: parse_field(&f, 7, line, "bottom")?,
            h: parse_field(&f, 8, line, "height")?,
            w: parse_field(&f, 9, line, "width")?,
            l: parse_field(&f, 10, line, "length")?,
            x: parse_field(&f, 11, line, "x")?,
            y: parse_field(&f, 12, line, "y")?,
            z: parse_field(&f, 13, line, "z")?,
            rotation_y: parse_field(&f, 14, line, "rotation_y")?,
            score: if f.len() == 16 { Some(parse_field(&f, 15, line, "score")?) } else { None },
        });
    }
    Ok(out)
}

/// Intrinsics from the `P2:` projection row (left color camera):
/// fx = P2[0,0], cx = P2[0,2], fy = P2[1,1], cy = P2[1,2].
pub fn parse_calib_text(
    text: &str,
    img_w: u32,
    img_h: u32,
) -> Result<CameraIntrinsics, KittiError> {
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let Some(rest) = raw.strip_prefix("P2:") else { continue };
        let values: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
        let values = values.map_err(|_| KittiError::Parse {
            line,
            message: "P2 row holds a non-numeric value".into(),
        })?;
        if values.len() != 12 {
            return Err(KittiError::Parse {
                line,
                message: format!("P2 row has {} values, expected 12", values.len()),
            });
        }
        return Ok(CameraIntrinsics {
            fx: values[0],
            cx: values[2],
            fy: values[5],
            cy: values[6],
            img_w,
            img_h,
        });
    }
    Err(KittiError::MissingCalib)
}

/// Converts parsed labels to ground-truth entries.
///
/// Vehicle classes (and, with `vehicles_only` off, every other real class)
/// get the full corner→center and bottom-center→centroid treatment.
/// `DontCare` keeps its sentinel pose untouched and is marked `ignore`.
pub fn labels_to_ground_truth(labels: &[KittiLabel], opts: &KittiOptions) -> Vec<VehicleGT> {
    labels
        .iter()
        .filter(|label| {
            label.class == DONT_CARE
                || !opts.vehicles_only
                || VEHICLE_CLASSES.contains(&label.class.as_str())
        })
        .map(|label| {
            let ignore = label.class == DONT_CARE;
            let center = if ignore {
                [label.x, label.y, label.z]
            } else {
                [label.x, label.y - label.h / 2.0, label.z]
            };
            VehicleGT {
                model_index: None,
                box2d: Box2D::from_corners(label.left, label.top, label.right, label.bottom),
                box3d: Box3D {
                    center,
                    yaw: label.rotation_y,
                    template: Template3D::new(label.w, label.h, label.l),
                },
                parts2d: None,
                parts3d: None,
                visibility: None,
                truncation: label.truncation,
                occlusion: label.occlusion,
                alpha: label.alpha,
                ignore,
            }
        })
        .collect()
}

/// One-call ingestion: labels plus the camera from the calibration text.
pub fn parse_kitti_labels(
    label_text: &str,
    calib_text: &str,
    opts: &KittiOptions,
) -> Result<(Vec<VehicleGT>, CameraIntrinsics), KittiError> {
    let camera = parse_calib_text(calib_text, opts.img_w, opts.img_h)?;
    let labels = parse_label_text(label_text)?;
    Ok((labels_to_ground_truth(&labels, opts), camera))
}

/// File-path convenience over [`parse_kitti_labels`].
pub fn load_kitti_labels<P: AsRef<Path>, Q: AsRef<Path>>(
    label_path: P,
    calib_path: Q,
    opts: &KittiOptions,
) -> Result<(Vec<VehicleGT>, CameraIntrinsics), KittiError> {
    parse_kitti_labels(
        &std::fs::read_to_string(label_path)?,
        &std::fs::read_to_string(calib_path)?,
        opts,
    )
}

/// Formats a value in the canonical two-decimal style, except the exact
/// placeholder sentinels (`-1`, `-10`, `-1000`), which the format writes
/// as bare integers on `DontCare` lines.
fn fmt_canonical(v: f64) -> String {
    if v == -1.0 || v == -10.0 || v == -1000.0 {
        format!("{}", v as i64)
    } else {
        format!("{v:.2}")
    }
}

/// Renders labels in the canonical text form: two decimals everywhere,
/// integer occlusion, integer sentinels. Parsing canonical text and
/// writing it back is byte-identical.
pub fn write_label_text(labels: &[KittiLabel]) -> String {
    let mut out = String::new();
    for label in labels {
        let mut fields = vec![label.class.clone(), fmt_canonical(label.truncation)];
        fields.push(format!("{}", label.occlusion));
        for v in [
            label.alpha,
            label.left,
            label.top,
            label.right,
            label.bottom,
            label.h,
            label.w,
            label.l,
            label.x,
            label.y,
            label.z,
            label.rotation_y,
        ] {
            fields.push(fmt_canonical(v));
        }
        if let Some(score) = label.score {
            fields.push(fmt_canonical(score));
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n";

    const CALIB: &str = "P0: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 0.000000000000e+00 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 0.000000000000e+00 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00\nP2: 7.215377000000e+02 0.000000000000e+00 6.095593000000e+02 4.485728000000e+01 0.000000000000e+00 7.215377000000e+02 1.728540000000e+02 2.163791000000e-01 0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 2.745884000000e-03\n";

    #[test]
    fn parses_the_reference_line_field_by_field() {
        let labels = parse_label_text(SAMPLE).unwrap();
        assert_eq!(labels.len(), 1);
        let l = &labels[0];
        assert_eq!(l.class, "Car");
        assert_eq!(l.truncation, 0.0);
        assert_eq!(l.occlusion, 0);
        assert_eq!(l.alpha, -1.58);
        assert_eq!((l.left, l.top, l.right, l.bottom), (587.01, 173.33, 614.12, 200.12));
        assert_eq!((l.h, l.w, l.l), (1.65, 1.67, 3.64));
        assert_eq!((l.x, l.y, l.z), (-0.65, 1.71, 46.70));
        assert_eq!(l.rotation_y, -1.59);
        assert_eq!(l.score, None);
    }

    #[test]
    fn converts_corners_and_bottom_center() {
        let labels = parse_label_text(SAMPLE).unwrap();
        let gts = labels_to_ground_truth(&labels, &KittiOptions::default());
        assert_eq!(gts.len(), 1);
        let gt = &gts[0];
        assert!((gt.box2d.cx - 600.565).abs() < 1e-9);
        assert!((gt.box2d.cy - 186.725).abs() < 1e-9);
        assert!((gt.box2d.w - 27.11).abs() < 1e-9);
        assert!((gt.box2d.h - 26.79).abs() < 1e-9);
        assert_eq!(gt.box3d.template, Template3D::new(1.67, 1.65, 3.64));
        // Bottom-center (|-0.65, 1.71, 46.70|) lifts by h/2 along -y.
        assert_eq!(gt.box3d.center[0], -0.65);
        assert!((gt.box3d.center[1] - 0.885).abs() < 1e-12);
        assert_eq!(gt.box3d.center[2], 46.70);
        assert_eq!(gt.box3d.yaw, -1.59);
        assert_eq!(gt.alpha, -1.58);
        assert!(!gt.ignore);
        assert!(gt.parts2d.is_none() && gt.visibility.is_none());
    }

    #[test]
    fn dont_care_lines_become_ignore_regions_without_centroid_shift() {
        let text = "DontCare -1 -1 -10 559.62 175.83 575.40 183.15 -1 -1 -1 -1000 -1000 -1000 -10\n";
        let labels = parse_label_text(text).unwrap();
        let gts = labels_to_ground_truth(&labels, &KittiOptions::default());
        assert_eq!(gts.len(), 1);
        assert!(gts[0].ignore);
        // Sentinels survive untouched: no h/2 adjustment on placeholders.
        assert_eq!(gts[0].box3d.center, [-1000.0, -1000.0, -1000.0]);
        assert_eq!(gts[0].truncation, -1.0);
        assert_eq!(gts[0].occlusion, -1);
    }

    #[test]
    fn class_filter_drops_non_vehicles_when_asked() {
        let text = concat!(
            "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n",
            "Pedestrian 0.00 0 0.50 100.00 150.00 120.00 200.12 1.80 0.60 0.90 -8.00 1.80 20.00 0.55\n",
            "Van 0.00 1 2.00 300.00 160.00 400.00 220.00 2.10 1.90 5.20 2.00 1.60 25.00 2.05\n",
            "DontCare -1 -1 -10 10.00 10.00 20.00 20.00 -1 -1 -1 -1000 -1000 -1000 -10\n",
        );
        let labels = parse_label_text(text).unwrap();
        let filtered = labels_to_ground_truth(&labels, &KittiOptions::default());
        assert_eq!(filtered.len(), 3); // Car, Van, DontCare
        let everything =
            labels_to_ground_truth(&labels, &KittiOptions { vehicles_only: false, ..Default::default() });
        assert_eq!(everything.len(), 4);
    }

    #[test]
    fn wrong_field_count_reports_line_number() {
        let text = format!("{SAMPLE}Car 0.00 0 -1.58 587.01\n");
        match parse_label_text(&text).unwrap_err() {
            KittiError::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("5"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_numeric_field_reports_line_number() {
        let text = SAMPLE.replace("46.70", "forty");
        assert!(matches!(
            parse_label_text(&text).unwrap_err(),
            KittiError::Parse { line: 1, .. }
        ));
    }

    #[test]
    fn score_suffix_parses_and_round_trips() {
        let text = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59 0.87\n";
        let labels = parse_label_text(text).unwrap();
        assert_eq!(labels[0].score, Some(0.87));
        assert_eq!(write_label_text(&labels), text);
    }

    #[test]
    fn canonical_write_back_is_byte_identical() {
        let text = concat!(
            "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59\n",
            "Van 0.20 1 2.00 300.00 160.00 400.00 220.00 2.10 1.90 5.20 2.00 1.60 25.00 2.05\n",
            "DontCare -1 -1 -10 559.62 175.83 575.40 183.15 -1 -1 -1 -1000 -1000 -1000 -10\n",
        );
        let labels = parse_label_text(text).unwrap();
        assert_eq!(write_label_text(&labels), text);
    }

    #[test]
    fn calib_p2_maps_to_intrinsics() {
        let k = parse_calib_text(CALIB, 1242, 375).unwrap();
        assert_eq!(k.fx, 721.5377);
        assert_eq!(k.fy, 721.5377);
        assert_eq!(k.cx, 609.5593);
        assert_eq!(k.cy, 172.854);
        assert_eq!((k.img_w, k.img_h), (1242, 375));
    }

    #[test]
    fn missing_p2_is_a_dedicated_error() {
        assert!(matches!(
            parse_calib_text("P0: 1 2 3\n", 1242, 375),
            Err(KittiError::MissingCalib)
        ));
    }

    #[test]
    fn malformed_p2_reports_parse_error() {
        assert!(matches!(
            parse_calib_text("P2: 1 2 bad\n", 1242, 375),
            Err(KittiError::Parse { .. })
        ));
        assert!(matches!(
            parse_calib_text("P2: 1 2 3\n", 1242, 375),
            Err(KittiError::Parse { .. })
        ));
    }

    #[test]
    fn combined_ingestion_returns_both_parts() {
        let (gts, k) = parse_kitti_labels(SAMPLE, CALIB, &KittiOptions::default()).unwrap();
        assert_eq!(gts.len(), 1);
        assert_eq!(k.cx, 609.5593);
    }
}
