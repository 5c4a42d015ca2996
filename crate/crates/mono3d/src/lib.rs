//! Geometric core for monocular 3D vehicle analysis.
//!
//! The crate covers the non-learned side of a coarse-to-fine monocular
//! vehicle pipeline:
//!
//! * [`geom`] — pinhole camera, yaw-constrained rigid pose, 2D/3D boxes,
//!   IoU and non-maximum suppression;
//! * [`bank`] — vehicle shape bank: dimension templates, 3D part shapes, and
//!   labeled low-resolution occlusion meshes;
//! * [`codec`] — encodings between geometry and training targets, the
//!   multi-task losses with analytic gradients, and a gradient checker;
//! * [`proposal`] — anchor grids, proposal labeling, and box refinement;
//! * [`pose`] — 2D/3D part-correspondence pose recovery (full and
//!   yaw-constrained) plus a brute-force reference solver;
//! * [`annotate`] — semi-automatic ground-truth generation with ray-cast
//!   part-visibility classification (and a z-buffer cross-check);
//! * [`infer`] — template selection and 3D recovery from detection records;
//! * [`metrics`] — detection/orientation/localization metric suite;
//! * [`sim`] — synthetic scene generation, record files, and KITTI ingestion.
//!
//! Coordinate conventions are documented in [`geom`]; the bank file format in
//! [`bank`].

pub mod annotate;
pub mod bank;
pub mod codec;
pub mod geom;
pub mod infer;
pub mod metrics;
pub mod pose;
pub mod proposal;
pub mod sim;
