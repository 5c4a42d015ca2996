//! Training-target codec: encodings between geometric quantities and
//! regression/classification targets, the multi-task losses over those
//! targets, and finite-difference gradient verification.

mod gradcheck;
mod loss;
mod targets;

pub use gradcheck::{check_all_losses, max_grad_error, GradCheckReport, LossCheck, DEFAULT_STEP};
pub use loss::{
    detection_loss, part_loss, smooth_l1, softmax_log_loss, template_loss, total_loss,
    visibility_loss, DetectionGrads, DetectionSample, FullSample, LossError, LossWeights,
    RefinementSample,
};
pub use targets::{
    apply_template_similarity, decode_box_deltas, decode_parts, encode_box_deltas, encode_parts,
    encode_template_similarity, BoxDeltas, NormalizedParts, TemplateSimilarity, Visibility,
    VisibilityVector,
};
