//! Run configuration: one file, flag overrides, a single seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mono3d::bank::ShapeBank;
use mono3d::codec::LossWeights;
use mono3d::geom::CameraIntrinsics;
use mono3d::infer::InferenceConfig;
use mono3d::metrics::{Difficulty, EvalOptions, InterpPoints};
use mono3d::pose::{PnPMode, PnPOptions};
use mono3d::proposal::AnchorConfig;
use mono3d::sim::{NoiseSpec, SceneSpec};

use crate::CliError;

/// Complete settings for one run.
///
/// Loaded from a TOML or JSON file (`--config`, picked by extension);
/// individual flags override file values. The serialized form of this
/// struct is also the `config` echo embedded in every metrics report, so a
/// report names everything needed to reproduce it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Shape bank JSON; the built-in four-model bank when absent.
    pub bank: Option<PathBuf>,
    /// Camera intrinsics JSON; mutually exclusive with `calib`.
    pub camera: Option<PathBuf>,
    /// KITTI calibration text carrying a `P2` row; mutually exclusive
    /// with `camera`.
    pub calib: Option<PathBuf>,
    /// Image size assumed when reading `calib` files (calibration text
    /// does not carry one).
    pub img_w: u32,
    pub img_h: u32,
    /// Master seed; every random draw in a run flows from it. The scene
    /// seed below is ignored in favor of this one.
    pub seed: u64,
    /// Output directory, created on demand.
    pub out: PathBuf,
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
    pub eval: EvalOptions,
    pub loss_weights: LossWeights,
    pub pnp: PnPOptions,
    pub anchors: AnchorConfig,
    /// Detections kept per image (by score) before suppression.
    pub score_cap: usize,
    /// Non-maximum suppression overlap threshold.
    pub nms: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let infer = InferenceConfig::default();
        Self {
            bank: None,
            camera: None,
            calib: None,
            img_w: 1242,
            img_h: 375,
            seed: 0,
            out: PathBuf::from("out"),
            scene: SceneSpec::default(),
            noise: NoiseSpec::default(),
            eval: EvalOptions::default(),
            loss_weights: LossWeights::default(),
            pnp: infer.pnp.clone(),
            anchors: AnchorConfig::default(),
            score_cap: infer.score_cap,
            nms: infer.nms_threshold,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.camera.is_some() && self.calib.is_some() {
            return Err(CliError::validation(
                "camera and calib are mutually exclusive; give one source of intrinsics",
            ));
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return Err(CliError::validation(format!(
                "eval.iou_threshold must lie in (0, 1], got {}",
                self.eval.iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.nms) {
            return Err(CliError::validation(format!("nms must lie in [0, 1], got {}", self.nms)));
        }
        if self.score_cap == 0 {
            return Err(CliError::validation("score_cap must be at least 1"));
        }
        self.noise.validate().map_err(|e| CliError::validation(e.to_string()))?;
        for (name, path) in
            [("bank", &self.bank), ("camera", &self.camera), ("calib", &self.calib)]
        {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(CliError::validation(format!(
                        "{name} file does not exist: {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The configured bank, or the built-in one.
    pub fn resolve_bank(&self) -> Result<ShapeBank, CliError> {
        match &self.bank {
            None => Ok(mono3d::sim::synthetic::synthetic_bank()),
            Some(p) => mono3d::bank::load_bank(p)
                .map_err(|e| CliError::validation(format!("bank {}: {e}", p.display()))),
        }
    }

    /// The configured camera, or the built-in KITTI-like one.
    pub fn resolve_camera(&self) -> Result<CameraIntrinsics, CliError> {
        match (&self.camera, &self.calib) {
            (Some(p), None) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    CliError::validation(format!("camera {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::validation(format!("camera {}: {e}", p.display())))
            }
            (None, Some(p)) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    CliError::validation(format!("calib {}: {e}", p.display()))
                })?;
                mono3d::sim::kitti::parse_calib_text(&text, self.img_w, self.img_h)
                    .map_err(|e| CliError::validation(format!("calib {}: {e}", p.display())))
            }
            (None, None) => Ok(mono3d::sim::synthetic::kitti_like_camera()),
            (Some(_), Some(_)) => unreachable!("rejected by validate"),
        }
    }
}

/// Flags shared by every subcommand. Any flag given here overrides the
/// corresponding config-file value.
#[derive(Debug, clap::Args)]
pub struct Overrides {
    /// TOML or JSON run configuration (picked by file extension).
    #[arg(long, value_name = "FILE", global = true)]
    pub config: Option<PathBuf>,
    /// Shape bank JSON (default: built-in four-model bank).
    #[arg(long, value_name = "FILE", global = true)]
    pub bank: Option<PathBuf>,
    /// Camera intrinsics JSON.
    #[arg(long, value_name = "FILE", global = true, conflicts_with = "calib")]
    pub camera: Option<PathBuf>,
    /// KITTI calibration text with a P2 row.
    #[arg(long, value_name = "FILE", global = true)]
    pub calib: Option<PathBuf>,
    /// Master seed for all random draws.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", global = true)]
    pub out: Option<PathBuf>,
    /// Gaussian pixel noise on generated part locations.
    #[arg(long = "noise-parts-sigma", value_name = "PX", global = true)]
    pub noise_parts_sigma: Option<f64>,
    /// Detection/ground-truth IoU threshold for evaluation.
    #[arg(long, value_name = "F", global = true)]
    pub iou: Option<f64>,
    /// Non-maximum suppression overlap threshold.
    #[arg(long, value_name = "F", global = true)]
    pub nms: Option<f64>,
    /// Precision/recall interpolation points.
    #[arg(long, value_name = "11|41", value_parser = parse_interp, global = true)]
    pub interp: Option<InterpPoints>,
    /// Ground-truth difficulty bucket to evaluate.
    #[arg(
        long,
        value_name = "easy|moderate|hard|all",
        value_parser = parse_difficulty,
        global = true
    )]
    pub difficulty: Option<Difficulty>,
    /// Pose solver rotation model.
    #[arg(long = "pnp-mode", value_name = "yaw|6dof", value_parser = parse_pnp_mode, global = true)]
    pub pnp_mode: Option<PnPMode>,
}

fn parse_interp(s: &str) -> Result<InterpPoints, String> {
    match s {
        "11" => Ok(InterpPoints::Eleven),
        "41" => Ok(InterpPoints::FortyOne),
        other => Err(format!("expected 11 or 41, got {other}")),
    }
}

fn parse_difficulty(s: &str) -> Result<Difficulty, String> {
    match s {
        "easy" => Ok(Difficulty::Easy),
        "moderate" => Ok(Difficulty::Moderate),
        "hard" => Ok(Difficulty::Hard),
        "all" => Ok(Difficulty::All),
        other => Err(format!("expected easy, moderate, hard, or all, got {other}")),
    }
}

fn parse_pnp_mode(s: &str) -> Result<PnPMode, String> {
    match s {
        "yaw" => Ok(PnPMode::YawConstrained),
        "6dof" => Ok(PnPMode::Full6Dof),
        other => Err(format!("expected yaw or 6dof, got {other}")),
    }
}

fn load_file(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
}

/// The effective configuration: file values (or defaults) with flag
/// overrides applied, validated.
pub fn merged(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match &o.config {
        Some(path) => load_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &o.bank {
        cfg.bank = Some(v.clone());
    }
    // A camera flag displaces a file-configured calib (and vice versa):
    // the flag states which source the user wants.
    if let Some(v) = &o.camera {
        cfg.camera = Some(v.clone());
        cfg.calib = None;
    }
    if let Some(v) = &o.calib {
        cfg.calib = Some(v.clone());
        cfg.camera = None;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.out {
        cfg.out = v.clone();
    }
    if let Some(v) = o.noise_parts_sigma {
        cfg.noise.part_sigma = v;
    }
    if let Some(v) = o.iou {
        cfg.eval.iou_threshold = v;
    }
    if let Some(v) = o.nms {
        cfg.nms = v;
    }
    if let Some(v) = o.interp {
        cfg.eval.interp = v;
    }
    if let Some(v) = o.difficulty {
        cfg.eval.difficulty = v;
    }
    if let Some(v) = o.pnp_mode {
        cfg.pnp.mode = v;
    }
    cfg.validate()?;
    Ok(cfg)
}
