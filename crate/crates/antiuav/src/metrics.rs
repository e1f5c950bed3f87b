//! Tracking metrics for targets that may leave the frame.
//!
//! The headline measure is *state accuracy*: a per-frame average that scores
//! localization quality (IoU) on frames where the target is visible and
//! absence prediction on frames where it is not. A tracker therefore cannot
//! score well by always reporting a box — it must also know when the target
//! is gone. Precision and success curves follow the classic OTB protocol and
//! only consider visible frames.

use crate::geometry::{center_distance, iou, BoundingBox};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from metric computation.
#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction/ground-truth length mismatch: {predictions} vs {ground_truth} frames")]
    LengthMismatch {
        predictions: usize,
        ground_truth: usize,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("empty score list")]
    EmptyList,
    #[error("frame state invariant violated: box presence must match the exist flag")]
    InconsistentFrameState,
    #[error("prediction invariant violated: a present prediction must carry a box")]
    InconsistentPrediction,
    #[error("prediction score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
}

/// Per-frame ground truth: a visibility flag and, iff visible, a box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    exist: bool,
    rect: Option<BoundingBox>,
}

impl FrameState {
    /// A frame on which the target is visible at `rect`.
    pub fn visible(rect: BoundingBox) -> Self {
        Self {
            exist: true,
            rect: Some(rect),
        }
    }

    /// A frame on which the target is absent.
    pub fn absent() -> Self {
        Self {
            exist: false,
            rect: None,
        }
    }

    /// Validating constructor: the box must be present exactly when
    /// `exist` is set.
    pub fn try_new(exist: bool, rect: Option<BoundingBox>) -> Result<Self, MetricsError> {
        if exist != rect.is_some() {
            return Err(MetricsError::InconsistentFrameState);
        }
        Ok(Self { exist, rect })
    }

    pub fn exist(&self) -> bool {
        self.exist
    }

    pub fn rect(&self) -> Option<&BoundingBox> {
        self.rect.as_ref()
    }
}

/// Per-frame tracker output: a presence decision, a box when present, and a
/// confidence score in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionState {
    present: bool,
    rect: Option<BoundingBox>,
    score: f64,
}

impl PredictionState {
    /// A prediction asserting the target is visible at `rect`.
    pub fn present(rect: BoundingBox, score: f64) -> Result<Self, MetricsError> {
        Self::try_new(true, Some(rect), score)
    }

    /// A prediction asserting the target is absent.
    pub fn absent(score: f64) -> Result<Self, MetricsError> {
        Self::try_new(false, None, score)
    }

    /// Validating constructor: a present prediction must carry a box and the
    /// score must lie in `[0, 1]`. An absent prediction may omit the box.
    pub fn try_new(
        present: bool,
        rect: Option<BoundingBox>,
        score: f64,
    ) -> Result<Self, MetricsError> {
        if present && rect.is_none() {
            return Err(MetricsError::InconsistentPrediction);
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(MetricsError::ScoreOutOfRange(score));
        }
        Ok(Self {
            present,
            rect,
            score,
        })
    }

    pub fn is_present(&self) -> bool {
        self.present
    }

    pub fn rect(&self) -> Option<&BoundingBox> {
        self.rect.as_ref()
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

/// State accuracy of one tracked sequence, in `[0, 1]`.
///
/// Per frame `t` with ground-truth visibility `v_t`:
///
/// * `v_t = 1`: the frame contributes the IoU between the predicted and
///   ground-truth boxes (zero when the tracker declared the target absent).
/// * `v_t = 0`: the frame contributes 1 exactly when the tracker also
///   declared the target absent, else 0. Confidence scores play no role in
///   this credit — only the presence decision does.
///
/// The result is the mean contribution over all frames.
pub fn state_accuracy(
    predictions: &[PredictionState],
    ground_truth: &[FrameState],
) -> Result<f64, MetricsError> {
    if predictions.len() != ground_truth.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            ground_truth: ground_truth.len(),
        });
    }
    if ground_truth.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let mut acc = 0.0;
    for (p, g) in predictions.iter().zip(ground_truth) {
        if g.exist() {
            if let (true, Some(pr), Some(gr)) = (p.is_present(), p.rect(), g.rect()) {
                acc += iou(pr, gr);
            }
            // Declaring absence on a visible frame contributes 0.
        } else if !p.is_present() {
            acc += 1.0;
        }
        // Asserting a box on an invisible frame contributes 0.
    }
    Ok(acc / ground_truth.len() as f64)
}

/// Mean state accuracy over a set of per-sequence scores.
pub fn mean_state_accuracy(per_sequence: &[f64]) -> Result<f64, MetricsError> {
    if per_sequence.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    Ok(per_sequence.iter().sum::<f64>() / per_sequence.len() as f64)
}

/// A threshold-sweep curve (precision or success) plus its area under the
/// curve, computed as the mean of the curve values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    /// Strictly increasing sweep thresholds.
    pub thresholds: Vec<f64>,
    /// One value in `[0, 1]` per threshold.
    pub values: Vec<f64>,
    /// Mean of `values`.
    pub auc: f64,
    /// Set when no frame was eligible, in which case `values` are all zero
    /// and the curve carries no information.
    pub degenerate: bool,
}

impl EvalCurve {
    fn from_values(thresholds: Vec<f64>, values: Vec<f64>, degenerate: bool) -> Self {
        debug_assert_eq!(thresholds.len(), values.len());
        let auc = values.iter().sum::<f64>() / values.len() as f64;
        Self {
            thresholds,
            values,
            auc,
            degenerate,
        }
    }

    /// Curve value at the given threshold (which must be one of the sweep
    /// points, within floating-point equality).
    pub fn value_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|t| *t == threshold)
            .map(|i| self.values[i])
    }
}

/// Center-error thresholds for [`precision_curve`]: 0..=50 px in 1 px steps.
pub fn precision_thresholds() -> Vec<f64> {
    (0..=50).map(|k| k as f64).collect()
}

/// Overlap thresholds for [`success_curve`]: 0..=1 in steps of 0.05.
pub fn success_thresholds() -> Vec<f64> {
    (0..=20).map(|k| k as f64 / 20.0).collect()
}

/// Headline precision threshold, in pixels.
pub const PRECISION_HEADLINE_PX: f64 = 20.0;

/// OTB-style precision curve over center-location error.
///
/// Only frames where the ground truth is visible *and* the tracker reported
/// a box participate (absence predictions carry no center to measure, and
/// invisible frames are scored by state accuracy instead). Each curve value
/// is the fraction of participating frames whose center distance is at most
/// the threshold; the sweep runs 0..=50 px in 1 px steps, with 20 px as the
/// customary headline point.
///
/// When no frame participates, the curve is all zeros and flagged
/// [`EvalCurve::degenerate`].
pub fn precision_curve(
    predictions: &[PredictionState],
    ground_truth: &[FrameState],
) -> Result<EvalCurve, MetricsError> {
    if predictions.len() != ground_truth.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            ground_truth: ground_truth.len(),
        });
    }
    let mut distances = Vec::new();
    for (p, g) in predictions.iter().zip(ground_truth) {
        if let (Some(gr), true, Some(pr)) = (g.rect(), p.is_present(), p.rect()) {
            distances.push(center_distance(pr, gr));
        }
    }
    let thresholds = precision_thresholds();
    if distances.is_empty() {
        let n = thresholds.len();
        return Ok(EvalCurve::from_values(thresholds, vec![0.0; n], true));
    }
    let values = thresholds
        .iter()
        .map(|thr| {
            distances.iter().filter(|d| **d <= *thr).count() as f64 / distances.len() as f64
        })
        .collect();
    Ok(EvalCurve::from_values(thresholds, values, false))
}

/// OTB-style success curve over per-frame overlap.
///
/// All frames with visible ground truth participate; a frame where the
/// tracker declared the target absent counts as overlap 0. Invisible frames
/// are excluded entirely (state accuracy already scores absence handling).
/// Each value is the fraction of participating frames whose IoU is
/// *strictly greater* than the threshold; the sweep runs 0..=1 in steps of
/// 0.05 and the AUC is the mean of the values.
pub fn success_curve(
    predictions: &[PredictionState],
    ground_truth: &[FrameState],
) -> Result<EvalCurve, MetricsError> {
    if predictions.len() != ground_truth.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            ground_truth: ground_truth.len(),
        });
    }
    let mut overlaps = Vec::new();
    for (p, g) in predictions.iter().zip(ground_truth) {
        if let Some(gr) = g.rect() {
            let ov = match (p.is_present(), p.rect()) {
                (true, Some(pr)) => iou(pr, gr),
                _ => 0.0,
            };
            overlaps.push(ov);
        }
    }
    let thresholds = success_thresholds();
    if overlaps.is_empty() {
        let n = thresholds.len();
        return Ok(EvalCurve::from_values(thresholds, vec![0.0; n], true));
    }
    let values = thresholds
        .iter()
        .map(|thr| overlaps.iter().filter(|ov| **ov > *thr).count() as f64 / overlaps.len() as f64)
        .collect();
    Ok(EvalCurve::from_values(thresholds, values, false))
}
