//! Anchor grid, box delta coding, and proposal selection.
//!
//! Anchors are laid on the feature grid (one scale, several aspect
//! ratios), box regression uses the standard center/log-size offsets, and
//! proposal selection is greedy non-maximum suppression with a fully
//! deterministic tie rule: score descending, then anchor index ascending.

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoundingBox};
use crate::tape::Arr;
use crate::tracker::TrackerError;

/// Anchor layout: one scale by `aspect_ratios.len()` shapes per feature cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Side length of the square (ratio 1) anchor, in image pixels.
    pub base_px: f64,
    /// Height/width ratios; anchor area stays `base_px²` for every ratio.
    pub aspect_ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            base_px: 16.0,
            aspect_ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

/// Index arithmetic for the RPN output layout.
///
/// Anchor `n` enumerates ratio-major, then rows, then columns:
/// `n = (a * height + y) * width + x`, matching the flattened
/// `(A, h, w)` objectness map.
#[derive(Clone, Copy, Debug)]
pub struct AnchorLayout {
    pub ratios: usize,
    pub height: usize,
    pub width: usize,
}

impl AnchorLayout {
    pub fn count(&self) -> usize {
        self.ratios * self.height * self.width
    }

    /// Flat index of anchor `n`'s objectness logit in the `(A, h, w)` map.
    pub fn score_flat(&self, n: usize) -> usize {
        n
    }

    /// Flat index of anchor `n`'s regression component `d` in the
    /// `(4A, h, w)` map, whose channels run `[a0 dx, a0 dy, a0 dw, a0 dh,
    /// a1 dx, ...]`.
    pub fn delta_flat(&self, n: usize, d: usize) -> usize {
        let cell = self.height * self.width;
        let a = n / cell;
        let yx = n % cell;
        ((a * 4 + d) * self.height * self.width) + yx
    }
}

/// Generates the anchor boxes for a `height x width` feature map.
///
/// Anchor centers sit at feature-cell centers scaled by `stride`; order is
/// ratio-major then row-major, matching [`AnchorLayout`]. Border anchors
/// may overhang the image; only decoded proposals are clipped.
pub fn generate_anchors(
    height: usize,
    width: usize,
    stride: usize,
    cfg: &AnchorConfig,
) -> Vec<BoundingBox> {
    let mut anchors = Vec::with_capacity(cfg.aspect_ratios.len() * height * width);
    for ratio in &cfg.aspect_ratios {
        let w = cfg.base_px / ratio.sqrt();
        let h = cfg.base_px * ratio.sqrt();
        for y in 0..height {
            for x in 0..width {
                let cx = (x as f64 + 0.5) * stride as f64;
                let cy = (y as f64 + 0.5) * stride as f64;
                anchors.push(
                    BoundingBox::from_center(cx, cy, w, h)
                        .expect("anchor geometry is always finite and ordered"),
                );
            }
        }
    }
    anchors
}

/// Largest |log-size delta| accepted when decoding, guarding `exp` blowups
/// from untrained regression heads.
const MAX_LOG_SIZE_DELTA: f64 = 4.0;

/// Encodes `target` relative to `anchor` as (dx, dy, dw, dh):
/// center offsets normalized by the anchor size, log size ratios.
pub fn encode_box_delta(anchor: &BoundingBox, target: &BoundingBox) -> [f64; 4] {
    let (acx, acy) = anchor.center();
    let (tcx, tcy) = target.center();
    let (aw, ah) = (anchor.width().max(1e-6), anchor.height().max(1e-6));
    [
        (tcx - acx) / aw,
        (tcy - acy) / ah,
        (target.width().max(1e-6) / aw).ln(),
        (target.height().max(1e-6) / ah).ln(),
    ]
}

/// Decodes a regression delta against its anchor and clips the result to
/// the `(height, width)` image bounds.
pub fn decode_box_delta(
    anchor: &BoundingBox,
    delta: &[f64; 4],
    image_size: (usize, usize),
) -> BoundingBox {
    let (acx, acy) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let cx = acx + delta[0] * aw;
    let cy = acy + delta[1] * ah;
    let w = aw * delta[2].clamp(-MAX_LOG_SIZE_DELTA, MAX_LOG_SIZE_DELTA).exp();
    let h = ah * delta[3].clamp(-MAX_LOG_SIZE_DELTA, MAX_LOG_SIZE_DELTA).exp();
    let raw = BoundingBox::from_center(cx, cy, w, h).expect("decoded box is finite and ordered");
    raw.clip_to(image_size.1 as f64, image_size.0 as f64)
}

/// Greedy non-maximum suppression.
///
/// Candidates are visited by score descending (ties: index ascending); a
/// candidate is kept iff its IoU with every previously kept box is at most
/// `iou_threshold`. Returns kept indices in visit order.
pub fn nms(boxes: &[BoundingBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "nms input length mismatch");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &candidate in &order {
        if kept
            .iter()
            .all(|&k| iou(&boxes[k], &boxes[candidate]) <= iou_threshold)
        {
            kept.push(candidate);
        }
    }
    kept
}

/// A scored candidate box emitted by the region-proposal stage.
#[derive(Clone, Debug)]
pub struct Proposal {
    /// Decoded, image-clipped box.
    pub rect: BoundingBox,
    /// Raw objectness logit of the source anchor.
    pub objectness: f64,
    /// Index of the anchor this proposal was decoded from.
    pub anchor_index: usize,
}

/// IoU threshold used by proposal suppression.
pub const PROPOSAL_NMS_IOU: f64 = 0.7;

/// Decodes all anchors, clips to the image, suppresses duplicates, and
/// returns up to `n_pnum` proposals ordered by score descending (anchor
/// index ascending on ties).
pub fn select_proposals(
    scores: &Arr,
    deltas: &Arr,
    anchors: &[BoundingBox],
    layout: AnchorLayout,
    image_size: (usize, usize),
    n_pnum: usize,
) -> Result<Vec<Proposal>, TrackerError> {
    if n_pnum < 1 {
        return Err(TrackerError::BadProposalCount(n_pnum));
    }
    let n = layout.count();
    if anchors.len() != n || scores.len() != n || deltas.len() != 4 * n {
        return Err(TrackerError::ShapeMismatch {
            what: "proposal selection inputs",
            expected: format!("{n} anchors/scores and {} delta values", 4 * n),
            got: format!(
                "{} anchors, {} scores, {} delta values",
                anchors.len(),
                scores.len(),
                deltas.len()
            ),
        });
    }
    if !scores.data().iter().all(|v| v.is_finite()) {
        return Err(TrackerError::NonFiniteInput("proposal scores"));
    }
    if !deltas.data().iter().all(|v| v.is_finite()) {
        return Err(TrackerError::NonFiniteInput("proposal box deltas"));
    }
    let mut boxes = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    for i in 0..n {
        let delta = [
            deltas.data()[layout.delta_flat(i, 0)],
            deltas.data()[layout.delta_flat(i, 1)],
            deltas.data()[layout.delta_flat(i, 2)],
            deltas.data()[layout.delta_flat(i, 3)],
        ];
        boxes.push(decode_box_delta(&anchors[i], &delta, image_size));
        logits.push(scores.data()[layout.score_flat(i)]);
    }
    let kept = nms(&boxes, &logits, PROPOSAL_NMS_IOU);
    Ok(kept
        .into_iter()
        .take(n_pnum)
        .map(|i| Proposal {
            rect: boxes[i],
            objectness: logits[i],
            anchor_index: i,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn anchor_grid_has_expected_geometry() {
        let cfg = AnchorConfig::default();
        let anchors = generate_anchors(8, 8, 8, &cfg);
        assert_eq!(anchors.len(), 3 * 64);
        // Ratio-major: the second block of 64 is the square anchor.
        let square = &anchors[64];
        assert_eq!(square.center(), (4.0, 4.0));
        assert!((square.width() - 16.0).abs() < 1e-12);
        assert!((square.height() - 16.0).abs() < 1e-12);
        // Ratio 0.5 anchor is wide, ratio 2 is tall; both keep area 256.
        let wide = &anchors[0];
        let tall = &anchors[128];
        assert!(wide.width() > wide.height());
        assert!(tall.height() > tall.width());
        assert!((wide.area() - 256.0).abs() < 1e-9);
        assert!((tall.area() - 256.0).abs() < 1e-9);
    }

    #[test]
    fn delta_coding_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let anchors = generate_anchors(8, 8, 8, &AnchorConfig::default());
        for _ in 0..200 {
            let a = &anchors[rng.gen_range(0..anchors.len())];
            let target = bb(
                rng.gen_range(0.0..40.0),
                rng.gen_range(0.0..40.0),
                rng.gen_range(41.0..64.0),
                rng.gen_range(41.0..64.0),
            );
            let delta = encode_box_delta(a, &target);
            let decoded = decode_box_delta(a, &delta, (64, 64));
            assert!((decoded.x1 - target.x1).abs() < 1e-9);
            assert!((decoded.y1 - target.y1).abs() < 1e-9);
            assert!((decoded.x2 - target.x2).abs() < 1e-9);
            assert!((decoded.y2 - target.y2).abs() < 1e-9);
        }
    }

    #[test]
    fn decoding_clips_to_image_bounds() {
        let anchor = bb(50.0, 50.0, 62.0, 62.0);
        let decoded = decode_box_delta(&anchor, &[3.0, 3.0, 1.0, 1.0], (64, 64));
        assert!(decoded.x2 <= 64.0 && decoded.y2 <= 64.0);
        assert!(decoded.x1 >= 0.0 && decoded.y1 >= 0.0);
    }

    #[test]
    fn nms_keeps_lower_index_on_exact_ties() {
        let boxes = vec![bb(0.0, 0.0, 10.0, 10.0), bb(0.0, 0.0, 10.0, 10.0)];
        let kept = nms(&boxes, &[0.5, 0.5], 0.7);
        assert_eq!(kept, vec![0]);
        // Higher score wins regardless of index.
        let kept = nms(&boxes, &[0.4, 0.9], 0.7);
        assert_eq!(kept, vec![1]);
    }

    #[test]
    fn nms_keeps_boxes_at_exactly_the_threshold() {
        // IoU exactly 0.7 is NOT suppressed (rule: suppress only above).
        // Integer-exact construction: areas 8 and 9 with intersection 7
        // give union 10, and 7/10 is the same f64 as the 0.7 literal.
        let boxes = vec![bb(0.0, 0.0, 8.0, 1.0), bb(1.0, 0.0, 10.0, 1.0)];
        let i = iou(&boxes[0], &boxes[1]);
        assert_eq!(i, 0.7, "setup: iou must hit the threshold bit-exactly");
        assert_eq!(nms(&boxes, &[0.9, 0.8], 0.7), vec![0, 1]);
        // One ulp above the threshold suppresses.
        assert_eq!(nms(&boxes, &[0.9, 0.8], f64::from_bits(0.7f64.to_bits() - 1)), vec![0]);
    }

    /// Independent quadratic formulation: a box survives iff every
    /// strictly-preferred surviving box overlaps it by at most the
    /// threshold, resolved in preference order.
    fn nms_oracle(boxes: &[BoundingBox], scores: &[f64], thr: f64) -> Vec<usize> {
        let prefer = |a: usize, b: usize| {
            scores[a] > scores[b] || (scores[a] == scores[b] && a < b)
        };
        let mut alive = vec![true; boxes.len()];
        // Repeatedly take the most preferred unprocessed candidate.
        let mut processed = vec![false; boxes.len()];
        let mut kept = Vec::new();
        loop {
            let mut best: Option<usize> = None;
            for i in 0..boxes.len() {
                if !processed[i] && alive[i] && best.map_or(true, |b| prefer(i, b)) {
                    best = Some(i);
                }
            }
            let Some(b) = best else { break };
            processed[b] = true;
            kept.push(b);
            for i in 0..boxes.len() {
                if alive[i] && i != b && iou(&boxes[b], &boxes[i]) > thr {
                    alive[i] = false;
                }
            }
        }
        kept
    }

    #[test]
    fn nms_matches_quadratic_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for case in 0..300 {
            let n = rng.gen_range(1..40);
            let mut boxes = Vec::with_capacity(n);
            let mut scores = Vec::with_capacity(n);
            for _ in 0..n {
                let x1: f64 = rng.gen_range(0.0..50.0);
                let y1: f64 = rng.gen_range(0.0..50.0);
                boxes.push(bb(
                    x1,
                    y1,
                    x1 + rng.gen_range(1.0..20.0),
                    y1 + rng.gen_range(1.0..20.0),
                ));
                // Coarse scores so ties actually occur.
                scores.push(rng.gen_range(0..5) as f64 / 4.0);
            }
            assert_eq!(
                nms(&boxes, &scores, 0.7),
                nms_oracle(&boxes, &scores, 0.7),
                "case {case}"
            );
        }
    }

    #[test]
    fn select_proposals_picks_the_dominant_anchor() {
        let layout = AnchorLayout {
            ratios: 3,
            height: 8,
            width: 8,
        };
        let anchors = generate_anchors(8, 8, 8, &AnchorConfig::default());
        let mut scores = Arr::zeros(&[3, 8, 8]);
        // Anchor 100 (square block, cell (4,4)) dominates.
        scores.data_mut()[100] = 5.0;
        let deltas = Arr::zeros(&[12, 8, 8]);
        let props = select_proposals(&scores, &deltas, &anchors, layout, (64, 64), 1).unwrap();
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].anchor_index, 100);
        // Zero deltas: the proposal is the anchor itself (clipped).
        let a = &anchors[100];
        assert_eq!(
            (props[0].rect.x1, props[0].rect.y1),
            (a.x1.max(0.0), a.y1.max(0.0))
        );
        assert!(select_proposals(&scores, &deltas, &anchors, layout, (64, 64), 0).is_err());
    }

    #[test]
    fn select_proposals_orders_by_score_then_index() {
        let layout = AnchorLayout {
            ratios: 1,
            height: 2,
            width: 2,
        };
        let anchors = vec![
            bb(0.0, 0.0, 4.0, 4.0),
            bb(20.0, 0.0, 24.0, 4.0),
            bb(0.0, 20.0, 4.0, 24.0),
            bb(20.0, 20.0, 24.0, 24.0),
        ];
        let scores = Arr::from_vec(vec![1, 2, 2], vec![1.0, 3.0, 3.0, 2.0]);
        let deltas = Arr::zeros(&[4, 2, 2]);
        let props = select_proposals(&scores, &deltas, &anchors, layout, (32, 32), 4).unwrap();
        let order: Vec<usize> = props.iter().map(|p| p.anchor_index).collect();
        assert_eq!(order, vec![1, 2, 3, 0]);
    }
}
