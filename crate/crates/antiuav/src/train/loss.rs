//! Loss terms for the two modulation stages and the combined training step.
//!
//! The proposal-stage loss mixes a sampled-anchor classification term with
//! a positives-only box regression term; the instance-stage loss averages
//! per-proposal confidence + refinement costs. Cross-sequence pairs add
//! their own proposal-stage terms, weighted by α, optionally restricted to
//! one task for the ablation variants.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoundingBox};
use crate::metrics::FrameState;
use crate::tape::{Arr, Tape, Var};
use crate::tracker::anchors::{
    encode_box_delta, generate_anchors, select_proposals, AnchorLayout, Proposal,
};
use crate::tracker::{BoundModel, FeatureMapVar, Model};

use super::targets::AnchorTargets;
use super::{build_modulation_pairs, PairKind, Sgd, Strategy, TrainError, TrainingBatch};

/// Which tasks of the proposal-stage loss a pair contributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskMask {
    Both,
    ClsOnly,
    RegOnly,
}

/// The tasks cross pairs contribute under each strategy.
fn cross_mask(strategy: Strategy) -> TaskMask {
    match strategy {
        Strategy::DfscCls => TaskMask::ClsOnly,
        Strategy::DfscReg => TaskMask::RegOnly,
        _ => TaskMask::Both,
    }
}

/// One proposal-stage loss value plus its degenerate-regression flag.
#[derive(Clone, Copy, Debug)]
pub struct RpnLossTerm {
    pub var: Var,
    /// True iff the frame had a visible target but no positive anchors, so
    /// the regression term contributed nothing.
    pub degenerate: bool,
}

/// Proposal-stage loss on one (scores, deltas) pair:
/// mean cross-entropy over the sampled anchors plus `beta` times the
/// positive-count-normalized smooth-L1 over encoded box deltas. The mask
/// drops the excluded task entirely (its parameters receive no gradient).
pub fn rpn_loss(
    tape: &mut Tape,
    scores: Var,
    deltas: Var,
    layout: AnchorLayout,
    targets: &AnchorTargets,
    beta: f64,
    mask: TaskMask,
) -> RpnLossTerm {
    assert_eq!(tape.value(scores).len(), layout.count(), "score map size");
    assert_eq!(tape.value(deltas).len(), 4 * layout.count(), "delta map size");
    assert!(!targets.sampled.is_empty(), "at least one sampled anchor");

    let cls = if mask != TaskMask::RegOnly {
        let idx: Vec<usize> = targets.sampled.iter().map(|&n| layout.score_flat(n)).collect();
        let count = idx.len();
        let picked = tape.gather(scores, idx);
        let labels = Arr::from_vec(vec![count], targets.labels.clone());
        let ce = tape.bce_logits(picked, &labels);
        Some(tape.mean(ce))
    } else {
        None
    };

    let reg = if mask != TaskMask::ClsOnly && !targets.positives.is_empty() {
        let idx: Vec<usize> = targets
            .positives
            .iter()
            .flat_map(|&n| (0..4).map(move |d| layout.delta_flat(n, d)))
            .collect();
        let picked = tape.gather(deltas, idx);
        let flat: Vec<f64> = targets.deltas.iter().flatten().copied().collect();
        let target = Arr::from_vec(vec![flat.len()], flat);
        let l1 = tape.smooth_l1(picked, &target);
        let total = tape.sum(l1);
        Some(tape.scale(total, beta / targets.positives.len() as f64))
    } else {
        None
    };

    let var = match (cls, reg) {
        (Some(c), Some(r)) => tape.add(c, r),
        (Some(c), None) => c,
        (None, Some(r)) => r,
        (None, None) => tape.input(Arr::scalar(0.0)),
    };
    RpnLossTerm {
        var,
        degenerate: targets.degenerate,
    }
}

/// Instance-stage loss for one entry: every proposal is pooled from the
/// search feature map, gated by the query, and scored; the per-proposal
/// confidence cross-entropy plus (positives only) `beta`-weighted smooth-L1
/// refinement costs are averaged over the proposals used.
///
/// Proposals with IoU ≥ 0.5 against the ground truth count as the target;
/// an invisible target makes every proposal background and the regression
/// term exactly zero.
pub fn ism_entry_loss(
    tape: &mut Tape,
    bound: &BoundModel,
    query: Var,
    search: FeatureMapVar,
    proposals: &[Proposal],
    truth: &FrameState,
    beta: f64,
) -> Result<Var, TrainError> {
    assert!(!proposals.is_empty(), "at least one proposal");
    let stride = search.stride as f64;
    let mut acc: Option<Var> = None;
    for proposal in proposals {
        let feature_rect = BoundingBox::new(
            proposal.rect.x1 / stride,
            proposal.rect.y1 / stride,
            proposal.rect.x2 / stride,
            proposal.rect.y2 / stride,
        )
        .expect("scaled proposal stays ordered");
        let roi = tape.roi_align(search.var, &feature_rect, bound.config().roi_size);
        let modulated = bound.ism_modulate(tape, query, roi)?;
        let (confidence, refine) = bound.rcnn_forward(tape, modulated)?;

        let positive = truth
            .rect()
            .is_some_and(|gt| iou(&proposal.rect, gt) >= ISM_POSITIVE_IOU);
        let label = Arr::from_vec(vec![1], vec![if positive { 1.0 } else { 0.0 }]);
        let ce = tape.bce_logits(confidence, &label);
        let mut term = tape.sum(ce);
        if positive {
            let gt = truth.rect().expect("positive implies a box");
            let encoded = encode_box_delta(&proposal.rect, gt);
            let target = Arr::from_vec(vec![4], encoded.to_vec());
            let l1 = tape.smooth_l1(refine, &target);
            let reg_sum = tape.sum(l1);
            let reg = tape.scale(reg_sum, beta);
            term = tape.add(term, reg);
        }
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    let total = acc.expect("non-empty proposals");
    Ok(tape.scale(total, 1.0 / proposals.len() as f64))
}

/// IoU at or above which a proposal counts as the target in the
/// instance-stage loss.
pub const ISM_POSITIVE_IOU: f64 = 0.5;

/// Loss weighting and strategy knobs.
#[derive(Clone, Debug)]
pub struct LossConfig {
    pub strategy: Strategy,
    /// Cross-pair weight (Eq. 3 sense).
    pub alpha: f64,
    /// Regression weight inside each detection loss.
    pub beta: f64,
    /// Divide the cross-pair sum by the number of cross pairs before
    /// weighting (off by default: plain sums).
    pub normalize_cross: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Dfsc,
            alpha: 0.25,
            beta: 1.0,
            normalize_cross: false,
        }
    }
}

/// Tape handles of all loss components for one batch.
#[derive(Clone, Debug)]
pub struct LossVars {
    pub l_same: Var,
    /// Cross-pair sum (after optional normalization), absent when the
    /// strategy builds no cross pairs.
    pub l_cross: Option<Var>,
    pub l_csm: Var,
    pub l_ism: Var,
    pub total: Var,
    /// Entries whose visible target matched no anchor.
    pub degenerate_frames: usize,
}

/// Scalar record of one step's losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_same: f64,
    pub l_cross: f64,
    pub l_csm: f64,
    pub l_ism: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Entries in this batch whose visible target matched no anchor.
    pub degenerate_frames: usize,
}

impl LossBreakdown {
    pub fn from_vars(tape: &Tape, vars: &LossVars, cfg: &LossConfig) -> Self {
        Self {
            l_same: tape.value(vars.l_same).item(),
            l_cross: vars.l_cross.map_or(0.0, |v| tape.value(v).item()),
            l_csm: tape.value(vars.l_csm).item(),
            l_ism: tape.value(vars.l_ism).item(),
            total: tape.value(vars.total).item(),
            alpha: cfg.alpha,
            beta: cfg.beta,
            degenerate_frames: vars.degenerate_frames,
        }
    }
}

/// Per-entry tape handles shared by both loss stages.
struct EntryFeatures {
    query: Var,
    search: FeatureMapVar,
}

/// Sums a non-empty list of scalar vars in order.
fn sum_terms(tape: &mut Tape, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    acc
}

/// Builds the full training loss for one batch on the tape.
///
/// `targets` must align with the batch entries (one per search frame,
/// computed against this model's anchor grid). `proposals_override`, when
/// given, replaces proposal selection per entry — used by the
/// finite-difference harness to keep the non-differentiable selection
/// fixed under perturbation.
pub fn compute_losses(
    tape: &mut Tape,
    bound: &BoundModel,
    batch: &TrainingBatch,
    targets: &[AnchorTargets],
    cfg: &LossConfig,
    proposals_override: Option<&[Vec<Proposal>]>,
) -> Result<LossVars, TrainError> {
    let entries = batch.entries();
    assert_eq!(entries.len(), targets.len(), "one target set per entry");
    let n = entries.len();
    let image_size = (
        entries[0].search_image.shape()[1],
        entries[0].search_image.shape()[2],
    );

    let mut features = Vec::with_capacity(n);
    for entry in entries {
        let qf = bound.extract_features(tape, &entry.query_image)?;
        let query = bound.encode_query(tape, qf, &entry.query_box)?;
        let search = bound.extract_features(tape, &entry.search_image)?;
        features.push(EntryFeatures { query, search });
    }

    // Proposal-stage terms over all modulation pairs, in pair order.
    let pairs = build_modulation_pairs(n, cfg.strategy);
    let mut same_terms = Vec::new();
    let mut cross_terms = Vec::new();
    let mut same_rpn: Vec<Option<(Arr, Arr)>> = (0..n).map(|_| None).collect();
    let mut layout = None;
    for pair in &pairs {
        let modulated = bound.csm_modulate(
            tape,
            features[pair.query_index].query,
            features[pair.search_index].search.var,
        )?;
        let (scores, deltas) = bound.rpn_forward(tape, modulated)?;
        let shape = tape.value(scores).shape();
        let this_layout = AnchorLayout {
            ratios: shape[0],
            height: shape[1],
            width: shape[2],
        };
        layout.get_or_insert(this_layout);
        let mask = match pair.kind() {
            PairKind::Same => TaskMask::Both,
            PairKind::Cross => cross_mask(cfg.strategy),
        };
        let term = rpn_loss(
            tape,
            scores,
            deltas,
            this_layout,
            &targets[pair.search_index],
            cfg.beta,
            mask,
        );
        match pair.kind() {
            PairKind::Same => {
                same_terms.push(term.var);
                same_rpn[pair.search_index] =
                    Some((tape.value(scores).clone(), tape.value(deltas).clone()));
            }
            PairKind::Cross => cross_terms.push(term.var),
        }
    }
    let degenerate_frames = targets.iter().filter(|t| t.degenerate).count();

    let l_same = sum_terms(tape, &same_terms);
    let l_cross = if cross_terms.is_empty() {
        None
    } else {
        let raw = sum_terms(tape, &cross_terms);
        Some(if cfg.normalize_cross {
            tape.scale(raw, 1.0 / cross_terms.len() as f64)
        } else {
            raw
        })
    };
    let l_csm = match l_cross {
        None => l_same,
        Some(c) => {
            let weighted = tape.scale(c, cfg.alpha);
            tape.add(l_same, weighted)
        }
    };

    // Instance-stage terms: proposals come from each entry's own (same-pair)
    // proposal maps; selection is detached from the graph.
    let layout = layout.expect("at least one pair");
    let anchors = generate_anchors(
        layout.height,
        layout.width,
        bound.config().stride,
        &bound.config().anchor,
    );
    let mut proposals_per_entry = Vec::with_capacity(n);
    for i in 0..n {
        let proposals = match proposals_override {
            Some(fixed) => fixed[i].clone(),
            None => {
                let (scores, deltas) = same_rpn[i].as_ref().expect("same pair visited");
                select_proposals(
                    scores,
                    deltas,
                    &anchors,
                    layout,
                    image_size,
                    bound.config().n_pnum,
                )?
            }
        };
        proposals_per_entry.push(proposals);
    }
    let mut ism_same_terms = Vec::with_capacity(n);
    for i in 0..n {
        ism_same_terms.push(ism_entry_loss(
            tape,
            bound,
            features[i].query,
            features[i].search,
            &proposals_per_entry[i],
            &entries[i].search_truth,
            cfg.beta,
        )?);
    }
    let ism_same = sum_terms(tape, &ism_same_terms);
    let l_ism = if cfg.strategy == Strategy::DfscAll {
        // Mirror the proposal-stage pairing: cross queries also gate each
        // entry's proposals, supervised by the search entry's truth and
        // weighted by the same α.
        let mut ism_cross_terms = Vec::new();
        for pair in pairs.iter().filter(|p| p.kind() == PairKind::Cross) {
            ism_cross_terms.push(ism_entry_loss(
                tape,
                bound,
                features[pair.query_index].query,
                features[pair.search_index].search,
                &proposals_per_entry[pair.search_index],
                &entries[pair.search_index].search_truth,
                cfg.beta,
            )?);
        }
        if ism_cross_terms.is_empty() {
            ism_same
        } else {
            let raw = sum_terms(tape, &ism_cross_terms);
            let normalized = if cfg.normalize_cross {
                tape.scale(raw, 1.0 / ism_cross_terms.len() as f64)
            } else {
                raw
            };
            let weighted = tape.scale(normalized, cfg.alpha);
            tape.add(ism_same, weighted)
        }
    } else {
        ism_same
    };

    let total = tape.add(l_csm, l_ism);
    let vars = LossVars {
        l_same,
        l_cross,
        l_csm,
        l_ism,
        total,
        degenerate_frames,
    };
    for (term, var) in [
        ("L_same", Some(vars.l_same)),
        ("L_cross", vars.l_cross),
        ("L_CSM", Some(vars.l_csm)),
        ("L_ISM", Some(vars.l_ism)),
        ("total", Some(vars.total)),
    ] {
        if let Some(v) = var {
            let value = tape.value(v).item();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { term, value });
            }
        }
    }
    Ok(vars)
}

/// One optimization step: build the batch loss, backpropagate, and apply
/// the momentum update at `lr`.
pub fn train_step(
    model: &mut Model,
    opt: &mut Sgd,
    batch: &TrainingBatch,
    targets: &[AnchorTargets],
    cfg: &LossConfig,
    lr: f64,
) -> Result<LossBreakdown, TrainError> {
    let (grads, breakdown) = {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let vars = compute_losses(&mut tape, &bound, batch, targets, cfg, None)?;
        let breakdown = LossBreakdown::from_vars(&tape, &vars, cfg);
        let g = tape.backward(vars.total);
        let mut grads: BTreeMap<String, Arr> = BTreeMap::new();
        for (name, var) in bound.vars() {
            if let Some(arr) = g.get(var) {
                grads.insert(name.to_string(), arr.clone());
            }
        }
        (grads, breakdown)
    };
    if std::env::var_os("ANTIUAV_DEBUG_TRAIN").is_some() {
        let mut gmax: BTreeMap<String, f64> = BTreeMap::new();
        for (name, arr) in &grads {
            let p = name.split('.').take(2).collect::<Vec<_>>().join(".");
            let m = arr.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let e = gmax.entry(p).or_insert(0.0);
            *e = e.max(m);
        }
        eprintln!(
            "DEBUG train_step same {:.4} cross {:.4} ism {:.4} total {:.4}",
            breakdown.l_same, breakdown.l_cross, breakdown.l_ism, breakdown.total
        );
        eprint!("DEBUG   grad-max:");
        for (k, v) in &gmax {
            eprint!(" {k} {v:.2e}");
        }
        eprintln!();
    }
    opt.step(model, &grads, lr);
    Ok(breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::check_gradients;
    use crate::tracker::anchors::AnchorConfig;
    use crate::tracker::ModelConfig;
    use crate::train::targets::assign_anchor_targets;
    use crate::train::TrainEntry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> Model {
        Model::init(
            ModelConfig {
                input_channels: 1,
                backbone_channels: [4, 4, 4, 4],
                roi_size: 3,
                hidden_units: 8,
                n_pnum: 6,
                ..ModelConfig::default()
            },
            seed,
        )
    }

    fn rand_arr(rng: &mut ChaCha8Rng, shape: &[usize]) -> Arr {
        let mut a = Arr::zeros(shape);
        a.fill_uniform(rng, 0.0, 1.0);
        a
    }

    /// A 2-entry batch of 32x32 frames with visible targets.
    fn tiny_batch(seed: u64) -> (TrainingBatch, Vec<BoundingBox>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::new();
        let mut gts = Vec::new();
        for i in 0..2 {
            let gt = BoundingBox::new(
                4.0 + rng.gen_range(0.0..10.0),
                4.0 + rng.gen_range(0.0..10.0),
                18.0 + rng.gen_range(0.0..8.0),
                18.0 + rng.gen_range(0.0..8.0),
            )
            .unwrap();
            entries.push(TrainEntry {
                sequence_id: format!("seq_{i}"),
                query_image: rand_arr(&mut rng, &[1, 32, 32]),
                query_box: BoundingBox::new(6.0, 6.0, 20.0, 20.0).unwrap(),
                search_image: rand_arr(&mut rng, &[1, 32, 32]),
                search_truth: FrameState::visible(gt),
            });
            gts.push(gt);
        }
        (TrainingBatch::new(entries).unwrap(), gts)
    }

    fn grid_targets(batch: &TrainingBatch, seed: u64) -> Vec<AnchorTargets> {
        let anchors = generate_anchors(4, 4, 8, &AnchorConfig::default());
        batch
            .entries()
            .iter()
            .enumerate()
            .map(|(e, entry)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + e as u64);
                assign_anchor_targets(&anchors, &entry.search_truth, &mut rng)
            })
            .collect()
    }

    #[test]
    fn uniform_zero_logits_cost_ln_two() {
        let layout = AnchorLayout {
            ratios: 2,
            height: 4,
            width: 4,
        };
        let targets = AnchorTargets {
            sampled: (0..32).collect(),
            labels: (0..32).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect(),
            positives: vec![],
            deltas: vec![],
            degenerate: false,
        };
        let mut tape = Tape::new();
        let scores = tape.input(Arr::zeros(&[2, 4, 4]));
        let deltas = tape.input(Arr::zeros(&[8, 4, 4]));
        let term = rpn_loss(&mut tape, scores, deltas, layout, &targets, 1.0, TaskMask::Both);
        let v = tape.value(term.var).item();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-13, "{v}");
    }

    #[test]
    fn saturated_logits_and_exact_deltas_cost_under_1e3() {
        let anchors = generate_anchors(4, 4, 8, &AnchorConfig::default());
        let gt = anchors[21];
        let truth = FrameState::visible(gt);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let targets = assign_anchor_targets(&anchors, &truth, &mut rng);
        assert!(!targets.positives.is_empty());

        let layout = AnchorLayout {
            ratios: 3,
            height: 4,
            width: 4,
        };
        // Scores +10 on positives, -10 elsewhere; deltas exactly on target.
        let mut scores = Arr::zeros(&[3, 4, 4]);
        for v in scores.data_mut() {
            *v = -10.0;
        }
        for (&n, &l) in targets.sampled.iter().zip(&targets.labels) {
            scores.data_mut()[layout.score_flat(n)] = if l == 1.0 { 10.0 } else { -10.0 };
        }
        let mut deltas = Arr::zeros(&[12, 4, 4]);
        for (&n, d) in targets.positives.iter().zip(&targets.deltas) {
            for (k, &dv) in d.iter().enumerate() {
                deltas.data_mut()[layout.delta_flat(n, k)] = dv;
            }
        }
        let mut tape = Tape::new();
        let s = tape.input(scores);
        let d = tape.input(deltas);
        let term = rpn_loss(&mut tape, s, d, layout, &targets, 1.0, TaskMask::Both);
        let v = tape.value(term.var).item();
        assert!(v < 1e-3, "{v}");
        assert!(v > 0.0);
    }

    #[test]
    fn task_masks_cut_gradient_paths_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let anchors = generate_anchors(4, 4, 8, &AnchorConfig::default());
        let gt = BoundingBox::new(8.0, 9.0, 21.0, 23.0).unwrap();
        let targets = assign_anchor_targets(&anchors, &FrameState::visible(gt), &mut rng);
        let layout = AnchorLayout {
            ratios: 3,
            height: 4,
            width: 4,
        };
        for (mask, dead) in [(TaskMask::ClsOnly, "deltas"), (TaskMask::RegOnly, "scores")] {
            let mut tape = Tape::new();
            let s = tape.input(rand_arr(&mut rng, &[3, 4, 4]));
            let d = tape.input(rand_arr(&mut rng, &[12, 4, 4]));
            let term = rpn_loss(&mut tape, s, d, layout, &targets, 1.0, mask);
            let grads = tape.backward(term.var);
            let (alive_var, dead_var) = if dead == "deltas" { (s, d) } else { (d, s) };
            assert!(grads.get(alive_var).is_some());
            assert!(
                grads.get(dead_var).is_none(),
                "masked task must leave no gradient on {dead}"
            );
        }
    }

    #[test]
    fn degenerate_frame_keeps_classification_only() {
        let anchors = vec![BoundingBox::new(0.0, 0.0, 8.0, 8.0).unwrap()];
        let gt = BoundingBox::new(20.0, 20.0, 28.0, 28.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let targets = assign_anchor_targets(&anchors, &FrameState::visible(gt), &mut rng);
        assert!(targets.degenerate);
        let layout = AnchorLayout {
            ratios: 1,
            height: 1,
            width: 1,
        };
        let mut tape = Tape::new();
        let s = tape.input(Arr::zeros(&[1, 1, 1]));
        let d = tape.input(rand_arr(&mut rng, &[4, 1, 1]));
        let term = rpn_loss(&mut tape, s, d, layout, &targets, 1.0, TaskMask::Both);
        assert!(term.degenerate);
        let v = tape.value(term.var).item();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-13);
        let grads = tape.backward(term.var);
        assert!(grads.get(d).is_none(), "empty regression leaves deltas untouched");
    }

    #[test]
    fn rpn_loss_passes_finite_difference_checks() {
        let anchors = generate_anchors(2, 2, 8, &AnchorConfig::default());
        let layout = AnchorLayout {
            ratios: 3,
            height: 2,
            width: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..4 {
            let gt = BoundingBox::new(
                rng.gen_range(0.0..6.0),
                rng.gen_range(0.0..6.0),
                rng.gen_range(8.0..16.0),
                rng.gen_range(8.0..16.0),
            )
            .unwrap();
            let targets = assign_anchor_targets(&anchors, &FrameState::visible(gt), &mut rng);
            let scores0 = rand_arr(&mut rng, &[3, 2, 2]);
            let deltas0 = rand_arr(&mut rng, &[12, 2, 2]);
            let t = targets.clone();
            let rep = check_gradients(&[scores0, deltas0], 1e-5, move |tape, vars| {
                rpn_loss(tape, vars[0], vars[1], layout, &t, 1.3, TaskMask::Both).var
            });
            assert!(rep.max_rel_err < 1e-4, "trial {trial}: {}", rep.max_rel_err);
        }
    }

    /// Reference recomputation of the instance-stage loss: runs each
    /// proposal's head on its own tape and accumulates the scalar losses
    /// with plain arithmetic.
    fn ism_oracle(
        model: &Model,
        query: &Arr,
        search: &Arr,
        proposals: &[Proposal],
        truth: &FrameState,
        beta: f64,
    ) -> f64 {
        let huber = |d: f64| {
            if d.abs() < 1.0 {
                0.5 * d * d
            } else {
                d.abs() - 0.5
            }
        };
        let mut total = 0.0;
        for p in proposals {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let q = tape.input(query.clone());
            let s = tape.input(search.clone());
            let rect = BoundingBox::new(
                p.rect.x1 / 8.0,
                p.rect.y1 / 8.0,
                p.rect.x2 / 8.0,
                p.rect.y2 / 8.0,
            )
            .unwrap();
            let roi = tape.roi_align(s, &rect, bound.config().roi_size);
            let m = bound.ism_modulate(&mut tape, q, roi).unwrap();
            let (c, r) = bound.rcnn_forward(&mut tape, m).unwrap();
            let logit = tape.value(c).item();
            let refine = tape.value(r).data().to_vec();

            let positive = truth.rect().is_some_and(|gt| iou(&p.rect, gt) >= 0.5);
            let y = if positive { 1.0 } else { 0.0 };
            let ce = logit.max(0.0) - logit * y + (1.0 + (-logit.abs()).exp()).ln();
            total += ce;
            if positive {
                let t = encode_box_delta(&p.rect, truth.rect().unwrap());
                let reg: f64 = refine.iter().zip(t).map(|(a, b)| huber(a - b)).sum();
                total += beta * reg;
            }
        }
        total / proposals.len() as f64
    }

    fn proposals_from(rects: &[(f64, f64, f64, f64)]) -> Vec<Proposal> {
        rects
            .iter()
            .enumerate()
            .map(|(i, &(x1, y1, x2, y2))| Proposal {
                rect: BoundingBox::new(x1, y1, x2, y2).unwrap(),
                objectness: 1.0 - i as f64 * 0.1,
                anchor_index: i,
            })
            .collect()
    }

    #[test]
    fn ism_loss_matches_loop_oracle() {
        let model = tiny_model(14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let query = rand_arr(&mut rng, &[4, 3, 3]);
        let search = rand_arr(&mut rng, &[4, 4, 4]);
        let gt = BoundingBox::new(6.0, 6.0, 18.0, 18.0).unwrap();
        let truth = FrameState::visible(gt);
        // One exact-match positive, one near-miss positive, one background.
        let proposals = proposals_from(&[
            (6.0, 6.0, 18.0, 18.0),
            (7.0, 6.5, 18.5, 19.0),
            (20.0, 20.0, 30.0, 30.0),
        ]);
        let beta = 1.4;

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let q = tape.input(query.clone());
        let s = tape.input(search.clone());
        let feat = FeatureMapVar { var: s, stride: 8 };
        let loss = ism_entry_loss(&mut tape, &bound, q, feat, &proposals, &truth, beta).unwrap();
        let got = tape.value(loss).item();

        let want = ism_oracle(&model, &query, &search, &proposals, &truth, beta);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        assert!(got > 0.0);
    }

    #[test]
    fn ism_invisible_truth_is_pure_background_classification() {
        let model = tiny_model(16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let query = rand_arr(&mut rng, &[4, 3, 3]);
        let search = rand_arr(&mut rng, &[4, 4, 4]);
        let proposals = proposals_from(&[(2.0, 2.0, 12.0, 12.0), (16.0, 14.0, 30.0, 28.0)]);
        let truth = FrameState::absent();

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let q = tape.input(query.clone());
        let s = tape.input(search.clone());
        let feat = FeatureMapVar { var: s, stride: 8 };
        let loss = ism_entry_loss(&mut tape, &bound, q, feat, &proposals, &truth, 2.0).unwrap();
        let got = tape.value(loss).item();
        // beta is irrelevant without positives: the oracle with beta 0
        // must agree exactly.
        let want = ism_oracle(&model, &query, &search, &proposals, &truth, 0.0);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn ism_loss_passes_finite_difference_checks() {
        let model = tiny_model(18);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for trial in 0..3 {
            let query = rand_arr(&mut rng, &[4, 3, 3]);
            let search = rand_arr(&mut rng, &[4, 4, 4]);
            let gt = BoundingBox::new(5.0, 4.0, 17.0, 15.0).unwrap();
            let truth = FrameState::visible(gt);
            let proposals = proposals_from(&[
                (5.0, 4.0, 17.0, 15.0),
                (9.0, 8.0, 23.0, 21.0),
                (18.0, 20.0, 29.0, 30.0),
            ]);
            let m = model.clone();
            let rep = check_gradients(&[query, search], 1e-5, move |tape, vars| {
                let bound = m.bind(tape);
                let feat = FeatureMapVar {
                    var: vars[1],
                    stride: 8,
                };
                ism_entry_loss(tape, &bound, vars[0], feat, &proposals, &truth, 1.0).unwrap()
            });
            assert!(rep.max_rel_err < 1e-4, "trial {trial}: {}", rep.max_rel_err);
        }
    }

    #[test]
    fn alpha_zero_equals_l_same_bitwise_and_normal_matches() {
        let model = tiny_model(20);
        for seed in 0..8 {
            let (batch, _) = tiny_batch(100 + seed);
            let targets = grid_targets(&batch, 200 + seed);

            let run = |strategy: Strategy, alpha: f64| {
                let mut tape = Tape::new();
                let bound = model.bind(&mut tape);
                let cfg = LossConfig {
                    strategy,
                    alpha,
                    ..LossConfig::default()
                };
                let vars = compute_losses(&mut tape, &bound, &batch, &targets, &cfg, None).unwrap();
                LossBreakdown::from_vars(&tape, &vars, &cfg)
            };
            let dfsc0 = run(Strategy::Dfsc, 0.0);
            assert_eq!(
                dfsc0.l_csm.to_bits(),
                dfsc0.l_same.to_bits(),
                "alpha 0 leaves exactly L_same"
            );
            let normal = run(Strategy::Normal, 0.0);
            assert!((normal.total - dfsc0.total).abs() < 1e-12);
            assert_eq!(normal.l_cross, 0.0);
            // Sanity: a nonzero alpha actually moves the loss.
            let dfsc = run(Strategy::Dfsc, 0.25);
            assert!(dfsc.l_cross > 0.0);
            assert!((dfsc.l_csm - (dfsc.l_same + 0.25 * dfsc.l_cross)).abs() < 1e-15);
        }
    }

    #[test]
    fn csm_loss_matches_per_pair_recomputation() {
        // n = 2, alpha = 1: L_CSM equals the sum of the four pair losses,
        // each recomputed independently on a fresh tape.
        let model = tiny_model(21);
        let (batch, _) = tiny_batch(22);
        let targets = grid_targets(&batch, 23);

        let cfg = LossConfig {
            strategy: Strategy::Dfsc,
            alpha: 1.0,
            ..LossConfig::default()
        };
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let vars = compute_losses(&mut tape, &bound, &batch, &targets, &cfg, None).unwrap();
        let got = tape.value(vars.l_csm).item();

        let pair_loss = |i: usize, j: usize| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let entry_i = &batch.entries()[i];
            let entry_j = &batch.entries()[j];
            let qf = bound.extract_features(&mut tape, &entry_i.query_image).unwrap();
            let q = bound.encode_query(&mut tape, qf, &entry_i.query_box).unwrap();
            let sf = bound.extract_features(&mut tape, &entry_j.search_image).unwrap();
            let m = bound.csm_modulate(&mut tape, q, sf.var).unwrap();
            let (s, d) = bound.rpn_forward(&mut tape, m).unwrap();
            let layout = AnchorLayout {
                ratios: 3,
                height: 4,
                width: 4,
            };
            let term = rpn_loss(&mut tape, s, d, layout, &targets[j], cfg.beta, TaskMask::Both);
            tape.value(term.var).item()
        };
        let want = (pair_loss(0, 0) + pair_loss(1, 1)) + (pair_loss(0, 1) + pair_loss(1, 0));
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn cross_sum_is_permutation_invariant() {
        let model = tiny_model(24);
        let (batch, _) = tiny_batch(25);
        let targets = grid_targets(&batch, 26);
        let cfg = LossConfig {
            strategy: Strategy::Dfsc,
            alpha: 1.0,
            ..LossConfig::default()
        };
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let vars = compute_losses(&mut tape, &bound, &batch, &targets, &cfg, None).unwrap();
        let l_cross = tape.value(vars.l_cross.unwrap()).item();

        // Recompute each cross pair independently; with n = 2 those are
        // (0,1) and (1,0). Either summation order must agree with the
        // batched value within strict tolerance.
        let pair_loss = |i: usize, j: usize| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let entry_i = &batch.entries()[i];
            let entry_j = &batch.entries()[j];
            let qf = bound.extract_features(&mut tape, &entry_i.query_image).unwrap();
            let q = bound.encode_query(&mut tape, qf, &entry_i.query_box).unwrap();
            let sf = bound
                .extract_features(&mut tape, &entry_j.search_image)
                .unwrap();
            let m = bound.csm_modulate(&mut tape, q, sf.var).unwrap();
            let (s, d) = bound.rpn_forward(&mut tape, m).unwrap();
            let layout = AnchorLayout {
                ratios: 3,
                height: 4,
                width: 4,
            };
            let term = rpn_loss(&mut tape, s, d, layout, &targets[j], cfg.beta, TaskMask::Both);
            tape.value(term.var).item()
        };
        let pair_vals = [pair_loss(0, 1), pair_loss(1, 0)];
        let forward = pair_vals[0] + pair_vals[1];
        let reverse = pair_vals[1] + pair_vals[0];
        assert!((l_cross - forward).abs() < 1e-12);
        assert!((forward - reverse).abs() < 1e-12);
    }

    #[test]
    fn train_step_descends_at_small_learning_rate() {
        let mut model = tiny_model(27);
        let (batch, _) = tiny_batch(28);
        let targets = grid_targets(&batch, 29);
        let cfg = LossConfig::default();

        let loss_of = |m: &Model| {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape);
            let vars = compute_losses(&mut tape, &bound, &batch, &targets, &cfg, None).unwrap();
            tape.value(vars.total).item()
        };
        let before = loss_of(&model);
        let mut opt = Sgd::new(0.9, 1e-4);
        let breakdown =
            train_step(&mut model, &mut opt, &batch, &targets, &cfg, 1e-4).unwrap();
        assert!((breakdown.total - before).abs() < 1e-12);
        let after = loss_of(&model);
        assert!(
            after < before,
            "one small step must descend: {before} -> {after}"
        );
    }

    #[test]
    fn train_step_is_deterministic() {
        let (batch, _) = tiny_batch(30);
        let targets = grid_targets(&batch, 31);
        let cfg = LossConfig::default();
        let run = || {
            let mut model = tiny_model(32);
            let mut opt = Sgd::new(0.9, 1e-4);
            let mut trace = Vec::new();
            for _ in 0..3 {
                trace.push(
                    train_step(&mut model, &mut opt, &batch, &targets, &cfg, 0.01)
                        .unwrap()
                        .total,
                );
            }
            (trace, model)
        };
        let (ta, ma) = run();
        let (tb, mb) = run();
        assert_eq!(ta, tb);
        assert_eq!(ma.params(), mb.params());
    }

    #[test]
    fn dfsc_all_adds_weighted_cross_instance_terms() {
        let model = tiny_model(33);
        let (batch, _) = tiny_batch(34);
        let targets = grid_targets(&batch, 35);
        let run = |strategy: Strategy, alpha: f64| {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let cfg = LossConfig {
                strategy,
                alpha,
                ..LossConfig::default()
            };
            let vars = compute_losses(&mut tape, &bound, &batch, &targets, &cfg, None).unwrap();
            LossBreakdown::from_vars(&tape, &vars, &cfg)
        };
        let dfsc = run(Strategy::Dfsc, 0.25);
        let all = run(Strategy::DfscAll, 0.25);
        // Same proposal-stage losses; the instance stage gains cross terms.
        assert_eq!(dfsc.l_csm.to_bits(), all.l_csm.to_bits());
        assert!(all.l_ism > dfsc.l_ism);
        // At alpha 0 the variants coincide entirely.
        let dfsc0 = run(Strategy::Dfsc, 0.0);
        let all0 = run(Strategy::DfscAll, 0.0);
        assert_eq!(dfsc0.total.to_bits(), all0.total.to_bits());
    }
}
