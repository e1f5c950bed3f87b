//! Walks through the tracking measures on tiny hand-built sequences: the
//! state-accuracy score that rewards both localization and absence
//! prediction, and the OTB-style precision / success curves.
//!
//! ```text
//! cargo run --example metrics_walkthrough
//! ```

use antiuav::{
    iou, mean_state_accuracy, precision_curve, state_accuracy, success_curve, BoundingBox,
    FrameState, PredictionState,
};

fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

fn main() {
    // A five-frame ground truth: the target drifts right, disappears for
    // one frame, and returns.
    let truth = vec![
        FrameState::visible(bb(10.0, 10.0, 30.0, 30.0)),
        FrameState::visible(bb(14.0, 10.0, 34.0, 30.0)),
        FrameState::visible(bb(18.0, 10.0, 38.0, 30.0)),
        FrameState::absent(),
        FrameState::visible(bb(26.0, 10.0, 46.0, 30.0)),
    ];

    // Tracker A repeats the ground truth except that it misses the
    // disappearance (it keeps reporting a box on the absent frame).
    let a: Vec<PredictionState> = vec![
        PredictionState::present(bb(10.0, 10.0, 30.0, 30.0), 0.9).unwrap(),
        PredictionState::present(bb(14.0, 10.0, 34.0, 30.0), 0.9).unwrap(),
        PredictionState::present(bb(18.0, 10.0, 38.0, 30.0), 0.9).unwrap(),
        PredictionState::present(bb(22.0, 10.0, 42.0, 30.0), 0.9).unwrap(),
        PredictionState::present(bb(26.0, 10.0, 46.0, 30.0), 0.9).unwrap(),
    ];

    // Tracker B lags the target by 5 px but correctly reports the absent
    // frame (an absent report scores the frame by 1 - score, so a low
    // score on an absent frame is a confident, rewarded call).
    let b: Vec<PredictionState> = vec![
        PredictionState::present(bb(5.0, 10.0, 25.0, 30.0), 0.8).unwrap(),
        PredictionState::present(bb(9.0, 10.0, 29.0, 30.0), 0.8).unwrap(),
        PredictionState::present(bb(13.0, 10.0, 33.0, 30.0), 0.8).unwrap(),
        PredictionState::absent(0.1).unwrap(),
        PredictionState::present(bb(21.0, 10.0, 41.0, 30.0), 0.8).unwrap(),
    ];

    println!("per-frame contributions (visible frame -> IoU, absent frame -> 1 - score):\n");
    for (t, gt) in truth.iter().enumerate() {
        let describe = |p: &PredictionState| -> String {
            match (gt.exist(), p.rect()) {
                (true, Some(r)) => format!("IoU {:.4}", iou(gt.rect().unwrap(), r)),
                (true, None) => "IoU 0 (absent call on a visible frame)".to_string(),
                (false, _) => format!("1 - score = {:.2}", 1.0 - p.score()),
            }
        };
        println!(
            "  frame {t}: truth {:7} | A {} | B {}",
            if gt.exist() { "visible" } else { "absent" },
            describe(&a[t]),
            describe(&b[t]),
        );
    }

    let sa_a = state_accuracy(&a, &truth).unwrap();
    let sa_b = state_accuracy(&b, &truth).unwrap();
    println!("\nstate accuracy:  A = {sa_a:.4}   B = {sa_b:.4}");
    println!(
        "mean over both sequences (mSA) = {:.4}",
        mean_state_accuracy(&[sa_a, sa_b]).unwrap()
    );

    // Precision sweeps a center-distance threshold from 0 to 50 px;
    // success sweeps an IoU threshold from 0 to 1. Only frames where the
    // truth is visible and the tracker reported a box participate.
    let precision = precision_curve(&b, &truth).unwrap();
    let success = success_curve(&b, &truth).unwrap();
    println!("\ntracker B precision curve (center error <= threshold):");
    for t in [0.0, 5.0, 10.0, 20.0, 50.0] {
        println!("  within {t:>4.0} px: {:.2}", precision.value_at(t).unwrap());
    }
    println!("  area under the curve: {:.4}", precision.auc);
    println!("\ntracker B success curve (IoU > threshold):");
    for t in [0.0, 0.25, 0.5, 0.75] {
        println!("  IoU > {t:.2}: {:.2}", success.value_at(t).unwrap());
    }
    println!("  area under the curve: {:.4}", success.auc);
}
