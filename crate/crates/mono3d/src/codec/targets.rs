//! Encodings between image/world quantities and regression targets.
//!
//! All encodings are exact algebraic bijections (given the reference box or
//! bank), so `decode(encode(x)) == x` up to floating-point rounding. Box
//! deltas are expressed proposal-relative-to-ground-truth: offsets are
//! normalized by the ground-truth size and log-ratios divide proposal by
//! ground truth. Decoding inverts exactly that convention.

use serde::{Deserialize, Serialize};

use crate::bank::{ShapeBank, Template3D};
use crate::geom::{Box2D, Point2};

/// Box regression target `(dx, dy, dw, dh)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDeltas {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDeltas {
    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { dx: a[0], dy: a[1], dw: a[2], dh: a[3] }
    }
}

/// Part coordinates normalized to a reference box: `((u - cx)/w, (v - cy)/h)`.
pub type NormalizedParts = Vec<[f64; 2]>;

/// Per-part visibility state.
///
/// Serialized in snake case; the class index order (visible, occluded,
/// self_occluded, truncated) is the column order of 4-way score vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Visible,
    Occluded,
    SelfOccluded,
    Truncated,
}

impl Visibility {
    pub const COUNT: usize = 4;

    pub fn class_index(self) -> usize {
        match self {
            Visibility::Visible => 0,
            Visibility::Occluded => 1,
            Visibility::SelfOccluded => 2,
            Visibility::Truncated => 3,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Visibility::Visible),
            1 => Some(Visibility::Occluded),
            2 => Some(Visibility::SelfOccluded),
            3 => Some(Visibility::Truncated),
            _ => None,
        }
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.class_index()] = 1.0;
        v
    }
}

/// One visibility label per part.
pub type VisibilityVector = Vec<Visibility>;

/// Per-bank-model log size ratios `[ln(w/w_m), ln(h/h_m), ln(l/l_m)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateSimilarity {
    pub log_ratios: Vec<[f64; 3]>,
}

impl TemplateSimilarity {
    pub fn len(&self) -> usize {
        self.log_ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_ratios.is_empty()
    }
}

/// Encodes a proposal box against a ground-truth box.
///
/// Both boxes must have positive extents.
pub fn encode_box_deltas(proposal: &Box2D, gt: &Box2D) -> BoxDeltas {
    debug_assert!(proposal.is_valid() && gt.is_valid());
    BoxDeltas {
        dx: (proposal.cx - gt.cx) / gt.w,
        dy: (proposal.cy - gt.cy) / gt.h,
        dw: (proposal.w / gt.w).ln(),
        dh: (proposal.h / gt.h).ln(),
    }
}

/// Inverts [`encode_box_deltas`]: recovers the ground-truth box from the
/// proposal and its deltas.
pub fn decode_box_deltas(proposal: &Box2D, deltas: &BoxDeltas) -> Box2D {
    debug_assert!(proposal.is_valid());
    let w = proposal.w / deltas.dw.exp();
    let h = proposal.h / deltas.dh.exp();
    Box2D { cx: proposal.cx - deltas.dx * w, cy: proposal.cy - deltas.dy * h, w, h }
}

/// Normalizes pixel part coordinates to a reference box.
pub fn encode_parts(parts: &[Point2], reference: &Box2D) -> NormalizedParts {
    debug_assert!(reference.is_valid());
    parts
        .iter()
        .map(|p| [(p[0] - reference.cx) / reference.w, (p[1] - reference.cy) / reference.h])
        .collect()
}

/// Inverts [`encode_parts`] for the same reference box.
pub fn decode_parts(parts: &NormalizedParts, reference: &Box2D) -> Vec<Point2> {
    debug_assert!(reference.is_valid());
    parts
        .iter()
        .map(|q| [reference.cx + q[0] * reference.w, reference.cy + q[1] * reference.h])
        .collect()
}

/// Component-wise log ratios of a vehicle's dimensions against every bank
/// model. Values far outside `[-1, 1]` mean the vehicle is badly covered by
/// the bank and are logged as warnings.
pub fn encode_template_similarity(t: &Template3D, bank: &ShapeBank) -> TemplateSimilarity {
    let log_ratios = bank
        .models
        .iter()
        .map(|m| {
            [
                (t.w / m.template.w).ln(),
                (t.h / m.template.h).ln(),
                (t.l / m.template.l).ln(),
            ]
        })
        .collect::<Vec<_>>();
    for (i, r) in log_ratios.iter().enumerate() {
        if r.iter().any(|v| v.abs() > 1.0) {
            log::warn!(
                "template similarity against model {i} is {r:?}; the vehicle is far from the bank"
            );
        }
    }
    TemplateSimilarity { log_ratios }
}

/// Applies the similarity for model `index` back to that model's template.
pub fn apply_template_similarity(
    sim: &TemplateSimilarity,
    bank: &ShapeBank,
    index: usize,
) -> Template3D {
    let r = sim.log_ratios[index];
    let m = &bank.models[index].template;
    Template3D { w: r[0].exp() * m.w, h: r[1].exp() * m.h, l: r[2].exp() * m.l }
}
