//! One-pass inference: query initialization, per-frame tracking, and
//! existence-threshold calibration.
//!
//! Tracking is global: every frame is searched in full, so the tracker can
//! re-acquire the target after occlusion or absence without re-initialization.

use crate::geometry::BoundingBox;
use crate::metrics::{mean_state_accuracy, state_accuracy, FrameState, PredictionState};
use crate::tape::{sigmoid_scalar, Arr, Tape};
use crate::tracker::anchors::{decode_box_delta, generate_anchors, select_proposals, AnchorLayout};
use crate::tracker::{Model, QueryFeature, TrackerError};

/// Per-frame tracker output before the existence threshold is applied.
///
/// `rect` is `None` only on frames produced before the tracker was
/// initialized (no query yet); tracked frames always carry their best box
/// so the threshold can be re-applied during calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTrackOutput {
    pub rect: Option<BoundingBox>,
    pub score: f64,
}

impl RawTrackOutput {
    /// Applies an existence threshold, turning the raw output into a
    /// prediction: present iff a box exists and its score reaches `theta`.
    pub fn finalize(&self, theta: f64) -> PredictionState {
        match self.rect {
            Some(rect) if self.score >= theta => {
                PredictionState::present(rect, self.score).expect("tracker score is a probability")
            }
            _ => PredictionState::absent(self.score).expect("tracker score is a probability"),
        }
    }
}

/// Applies `theta` to a whole sequence of raw outputs.
pub fn finalize_outputs(raw: &[RawTrackOutput], theta: f64) -> Vec<PredictionState> {
    raw.iter().map(|r| r.finalize(theta)).collect()
}

/// Pools the query feature from an initialization frame and box.
pub fn make_query(
    model: &Model,
    frame: &Arr,
    rect: &BoundingBox,
    sequence_id: &str,
) -> Result<QueryFeature, TrackerError> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let feat = bound.extract_features(&mut tape, frame)?;
    let q = bound.encode_query(&mut tape, feat, rect)?;
    Ok(QueryFeature {
        data: tape.value(q).clone(),
        source_box: *rect,
        source_sequence: sequence_id.to_string(),
    })
}

/// Runs the full detection pipeline on one frame and returns the
/// top-confidence refined box with its squashed confidence.
pub fn track_step(
    model: &Model,
    query: &QueryFeature,
    frame: &Arr,
) -> Result<RawTrackOutput, TrackerError> {
    let image_size = (frame.shape()[1], frame.shape()[2]);
    let cfg = model.config();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);

    let feat = bound.extract_features(&mut tape, frame)?;
    let q = tape.input(query.data.clone());
    let csm = bound.csm_modulate(&mut tape, q, feat.var)?;
    let (scores, deltas) = bound.rpn_forward(&mut tape, csm)?;

    let fshape = tape.value(scores).shape().to_vec();
    let layout = AnchorLayout {
        ratios: cfg.anchors_per_cell(),
        height: fshape[1],
        width: fshape[2],
    };
    let anchors = generate_anchors(layout.height, layout.width, cfg.stride, &cfg.anchor);
    let proposals = select_proposals(
        tape.value(scores),
        tape.value(deltas),
        &anchors,
        layout,
        image_size,
        cfg.n_pnum,
    )?;

    let stride = feat.stride as f64;
    let mut best: Option<(f64, usize, BoundingBox)> = None;
    for (k, proposal) in proposals.iter().enumerate() {
        let feature_rect = BoundingBox::new(
            proposal.rect.x1 / stride,
            proposal.rect.y1 / stride,
            proposal.rect.x2 / stride,
            proposal.rect.y2 / stride,
        )
        .expect("scaled proposal stays ordered");
        let roi = tape.roi_align(feat.var, &feature_rect, cfg.roi_size);
        let ism = bound.ism_modulate(&mut tape, q, roi)?;
        let (conf, refine) = bound.rcnn_forward(&mut tape, ism)?;
        let logit = tape.value(conf).item();
        let d = tape.value(refine).data();
        let refined = decode_box_delta(&proposal.rect, &[d[0], d[1], d[2], d[3]], image_size);
        let better = match &best {
            None => true,
            Some((top, _, _)) => logit > *top,
        };
        if better {
            best = Some((logit, k, refined));
        }
    }
    let (logit, _, rect) = best.expect("proposal selection yields at least one box");
    Ok(RawTrackOutput {
        rect: Some(rect),
        score: sigmoid_scalar(logit),
    })
}

/// One-pass tracking of a whole sequence.
///
/// The first visible annotated frame initializes the query with its
/// ground-truth box (scored 1.0); frames before it are reported absent with
/// score 0; every later frame runs the full pipeline.
pub fn track_sequence_raw(
    model: &Model,
    frames: &[Arr],
    truth: &[FrameState],
) -> Result<Vec<RawTrackOutput>, TrackerError> {
    assert_eq!(
        frames.len(),
        truth.len(),
        "frame images and annotations must align"
    );
    let init = truth
        .iter()
        .position(|f| f.exist())
        .ok_or(TrackerError::NoVisibleFrames)?;
    let init_rect = *truth[init].rect().expect("visible frame carries a box");
    let query = make_query(model, &frames[init], &init_rect, "")?;

    let mut out = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        out.push(match t.cmp(&init) {
            std::cmp::Ordering::Less => RawTrackOutput {
                rect: None,
                score: 0.0,
            },
            std::cmp::Ordering::Equal => RawTrackOutput {
                rect: Some(init_rect),
                score: 1.0,
            },
            std::cmp::Ordering::Greater => track_step(model, &query, frame)?,
        });
    }
    Ok(out)
}

/// [`track_sequence_raw`] finalized at the model's configured threshold.
pub fn track_sequence(
    model: &Model,
    frames: &[Arr],
    truth: &[FrameState],
) -> Result<Vec<PredictionState>, TrackerError> {
    let raw = track_sequence_raw(model, frames, truth)?;
    Ok(finalize_outputs(&raw, model.config().theta_exist))
}

/// Number of grid points the threshold calibration sweeps (0.00 to 1.00).
pub const THETA_GRID_STEPS: usize = 20;

/// Picks the existence threshold maximizing mean state accuracy over the
/// given sequences, sweeping a 0.05-step grid; ties prefer the lower
/// threshold. Returns `(theta, msa at theta)`.
pub fn calibrate_theta(runs: &[(Vec<RawTrackOutput>, &[FrameState])]) -> (f64, f64) {
    assert!(!runs.is_empty(), "calibration needs at least one sequence");
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..=THETA_GRID_STEPS {
        let theta = k as f64 / THETA_GRID_STEPS as f64;
        let sas: Vec<f64> = runs
            .iter()
            .map(|(raw, truth)| {
                let preds = finalize_outputs(raw, theta);
                state_accuracy(&preds, truth).expect("aligned lengths")
            })
            .collect();
        let msa = mean_state_accuracy(&sas).expect("at least one sequence");
        if msa > best.1 {
            best = (theta, msa);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::ModelConfig;
    use rand_chacha::ChaCha8Rng;

    fn rand_frame(seed: u64, h: usize, w: usize) -> Arr {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Arr::zeros(&[1, h, w]);
        a.fill_uniform(&mut rng, 0.0, 1.0);
        a
    }

    #[test]
    fn track_step_is_deterministic() {
        let model = Model::init(ModelConfig::default(), 30);
        let frame = rand_frame(31, 64, 64);
        let rect = BoundingBox::new(20.0, 20.0, 34.0, 34.0).unwrap();
        let query = make_query(&model, &frame, &rect, "seq").unwrap();
        let a = track_step(&model, &query, &frame).unwrap();
        let b = track_step(&model, &query, &frame).unwrap();
        assert_eq!(a, b);
        let r = a.rect.unwrap();
        assert!(r.x1 >= 0.0 && r.y1 >= 0.0 && r.x2 <= 64.0 && r.y2 <= 64.0);
        assert!((0.0..=1.0).contains(&a.score));
    }

    #[test]
    fn track_sequence_handles_late_first_appearance() {
        let model = Model::init(ModelConfig::default(), 32);
        let frames: Vec<Arr> = (0..4).map(|t| rand_frame(40 + t, 64, 64)).collect();
        let rect = BoundingBox::new(10.0, 12.0, 22.0, 26.0).unwrap();
        let truth = vec![
            FrameState::absent(),
            FrameState::absent(),
            FrameState::visible(rect),
            FrameState::visible(rect),
        ];
        let raw = track_sequence_raw(&model, &frames, &truth).unwrap();
        assert_eq!(raw.len(), 4);
        assert_eq!(raw[0], RawTrackOutput { rect: None, score: 0.0 });
        assert_eq!(raw[1], RawTrackOutput { rect: None, score: 0.0 });
        assert_eq!(raw[2].rect, Some(rect));
        assert_eq!(raw[2].score, 1.0);
        assert!(raw[3].rect.is_some());

        let all_absent = vec![FrameState::absent(); 4];
        assert!(matches!(
            track_sequence_raw(&model, &frames, &all_absent),
            Err(TrackerError::NoVisibleFrames)
        ));
    }

    #[test]
    fn finalize_applies_threshold_with_boundary_inclusive() {
        let rect = BoundingBox::new(0.0, 0.0, 4.0, 4.0).unwrap();
        let raw = RawTrackOutput {
            rect: Some(rect),
            score: 0.5,
        };
        assert!(raw.finalize(0.5).is_present());
        assert!(!raw.finalize(0.55).is_present());
        let uninit = RawTrackOutput {
            rect: None,
            score: 0.0,
        };
        // Even theta = 0 cannot turn an uninitialized frame into a presence.
        assert!(!uninit.finalize(0.0).is_present());
    }

    #[test]
    fn calibrate_theta_finds_the_separating_threshold() {
        let rect = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        // Visible frames score 0.9 with a perfect box; absent frames are
        // (wrongly) boxed at score 0.3. Any theta in (0.3, 0.9] is perfect;
        // grid candidates 0.35..0.90 all give mSA 1.0 and the tie rule
        // picks 0.35.
        let raw = vec![
            RawTrackOutput { rect: Some(rect), score: 0.9 },
            RawTrackOutput { rect: Some(rect), score: 0.3 },
            RawTrackOutput { rect: Some(rect), score: 0.9 },
            RawTrackOutput { rect: Some(rect), score: 0.3 },
        ];
        let truth = vec![
            FrameState::visible(rect),
            FrameState::absent(),
            FrameState::visible(rect),
            FrameState::absent(),
        ];
        let (theta, msa) = calibrate_theta(&[(raw, truth.as_slice())]);
        assert!((msa - 1.0).abs() < 1e-12);
        assert!((theta - 0.35).abs() < 1e-12);
    }

    #[test]
    fn calibrate_theta_prefers_lower_threshold_on_ties() {
        let rect = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        // Every frame visible and perfectly boxed at score 1.0: all grid
        // points yield mSA 1.0, so the tie rule must pick theta = 0.0.
        let raw = vec![RawTrackOutput { rect: Some(rect), score: 1.0 }; 3];
        let truth = vec![FrameState::visible(rect); 3];
        let (theta, msa) = calibrate_theta(&[(raw, truth.as_slice())]);
        assert_eq!(theta, 0.0);
        assert!((msa - 1.0).abs() < 1e-12);
    }
}
