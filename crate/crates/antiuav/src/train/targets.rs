//! Anchor label assignment and sampling for the proposal-stage loss.
//!
//! Labels follow the standard two-threshold rule — positive above a high
//! IoU bar or as the best-overlapping anchor of the ground truth, negative
//! below a low bar, ignored in between — followed by a capped random sample
//! so the classification term isn't swamped by background.

use rand_chacha::ChaCha8Rng;

use crate::geometry::{iou, BoundingBox};
use crate::metrics::FrameState;
use crate::tracker::anchors::encode_box_delta;

/// IoU at or above which an anchor is labeled positive outright.
pub const POSITIVE_IOU: f64 = 0.7;
/// IoU strictly below which an anchor is a negative candidate.
pub const NEGATIVE_IOU: f64 = 0.3;
/// Total anchors sampled into the classification term per frame.
pub const SAMPLE_BUDGET: usize = 32;
/// Cap on positives within the sample; negatives fill the remainder.
pub const MAX_POSITIVES: usize = 16;

/// Sampled anchor supervision for one search frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTargets {
    /// Anchor indices in the classification term, ascending.
    pub sampled: Vec<usize>,
    /// Labels aligned with `sampled`: 1.0 target, 0.0 background.
    pub labels: Vec<f64>,
    /// Anchor indices in the regression term, ascending.
    pub positives: Vec<usize>,
    /// Encoded regression targets aligned with `positives`.
    pub deltas: Vec<[f64; 4]>,
    /// True iff the frame shows a target but no anchor overlaps it at all,
    /// leaving the regression term empty.
    pub degenerate: bool,
}

/// Draws `amount` distinct values from `pool` (deterministically for a
/// seeded generator) and returns them ascending.
fn sample_sorted(pool: &[usize], amount: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen: Vec<usize> = if amount >= pool.len() {
        pool.to_vec()
    } else {
        rand::seq::index::sample(rng, pool.len(), amount)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    };
    chosen.sort_unstable();
    chosen
}

/// Assigns and samples anchor labels against one frame's ground truth.
///
/// Visible target: positives are anchors with IoU ≥ 0.7 plus the single
/// best-overlapping anchor (lowest index on ties, only if its IoU is
/// nonzero); negatives are anchors with IoU < 0.3 that are not positive;
/// anchors in between are ignored. Up to 16 positives are kept and
/// negatives fill the 32-anchor budget. An invisible target makes every
/// anchor a negative candidate.
pub fn assign_anchor_targets(
    anchors: &[BoundingBox],
    truth: &FrameState,
    rng: &mut ChaCha8Rng,
) -> AnchorTargets {
    assert!(!anchors.is_empty(), "anchor set must be non-empty");
    let Some(gt) = truth.rect() else {
        let all: Vec<usize> = (0..anchors.len()).collect();
        let sampled = sample_sorted(&all, SAMPLE_BUDGET, rng);
        let labels = vec![0.0; sampled.len()];
        return AnchorTargets {
            sampled,
            labels,
            positives: Vec::new(),
            deltas: Vec::new(),
            degenerate: false,
        };
    };

    let overlaps: Vec<f64> = anchors.iter().map(|a| iou(a, gt)).collect();
    let mut positive = vec![false; anchors.len()];
    for (n, &o) in overlaps.iter().enumerate() {
        if o >= POSITIVE_IOU {
            positive[n] = true;
        }
    }
    let (best, best_iou) = overlaps
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (n, &o)| {
            if o > bv {
                (n, o)
            } else {
                (bi, bv)
            }
        });
    if best_iou > 0.0 {
        positive[best] = true;
    }

    let pos_pool: Vec<usize> = (0..anchors.len()).filter(|&n| positive[n]).collect();
    let neg_pool: Vec<usize> = (0..anchors.len())
        .filter(|&n| !positive[n] && overlaps[n] < NEGATIVE_IOU)
        .collect();
    let degenerate = pos_pool.is_empty();

    let positives = sample_sorted(&pos_pool, MAX_POSITIVES, rng);
    let negatives = sample_sorted(&neg_pool, SAMPLE_BUDGET - positives.len(), rng);

    let mut sampled: Vec<usize> = positives.iter().chain(&negatives).copied().collect();
    sampled.sort_unstable();
    let labels = sampled
        .iter()
        .map(|n| if positive[*n] { 1.0 } else { 0.0 })
        .collect();
    let deltas = positives
        .iter()
        .map(|&n| encode_box_delta(&anchors[n], gt))
        .collect();
    AnchorTargets {
        sampled,
        labels,
        positives,
        deltas,
        degenerate,
    }
}
