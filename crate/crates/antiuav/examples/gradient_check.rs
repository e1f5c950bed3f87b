//! Verifies the reverse-mode autodiff engine against central finite
//! differences: first on a small raw tape (convolution, pooling,
//! nonlinearity), then through the tracker's real modulation and head
//! stacks.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use antiuav::tape::{check_gradients, Arr};
use antiuav::tracker::{Model, ModelConfig};
use antiuav::BoundingBox;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_arr(rng: &mut ChaCha8Rng, shape: &[usize]) -> Arr {
    let mut a = Arr::zeros(shape);
    a.fill_uniform(rng, -1.0, 1.0);
    a
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // A raw composite graph: conv -> relu -> bilinear ROI pooling ->
    // sigmoid -> mean. Both the image and the kernel are checked.
    let image = rand_arr(&mut rng, &[2, 8, 8]);
    let kernel = rand_arr(&mut rng, &[3, 2, 3, 3]);
    let roi = BoundingBox::new(0.7, 1.2, 5.3, 6.1).unwrap();
    let report = check_gradients(&[image, kernel], 1e-5, |tape, vars| {
        let y = tape.conv2d(vars[0], vars[1], 2, 1);
        let y = tape.relu(y);
        let y = tape.roi_align(y, &roi, 3);
        let y = tape.sigmoid(y);
        tape.mean(y)
    });
    println!(
        "raw graph (conv / relu / roi_align / sigmoid): {} entries, max relative error {:.2e}",
        report.elements_checked, report.max_rel_err
    );
    assert!(report.max_rel_err < 1e-4);

    // The tracker's own stacks, shrunk so the sweep stays quick. The model
    // parameters are constants here; the perturbed inputs are the query
    // and search feature maps feeding the modulation stages.
    let config = ModelConfig {
        input_channels: 1,
        backbone_channels: [4, 4, 4, 4],
        roi_size: 3,
        hidden_units: 8,
        ..ModelConfig::default()
    };
    let model = Model::init(config.clone(), 20);
    let c = config.feature_channels();
    let k = config.roi_size;

    // Class-level stage: correlation modulation into the proposal head.
    let q = rand_arr(&mut rng, &[c, k, k]);
    let s = rand_arr(&mut rng, &[c, 5, 5]);
    let m = model.clone();
    let report = check_gradients(&[q, s], 1e-5, move |tape, vars| {
        let bound = m.bind(tape);
        let csm = bound.csm_modulate(tape, vars[0], vars[1]).unwrap();
        let (scores, deltas) = bound.rpn_forward(tape, csm).unwrap();
        let a = tape.mean(scores);
        let b = tape.mean(deltas);
        tape.add(a, b)
    });
    println!(
        "class-level modulation + proposal head:        {} entries, max relative error {:.2e}",
        report.elements_checked, report.max_rel_err
    );
    assert!(report.max_rel_err < 1e-4);

    // Instance-level stage: Hadamard modulation into the refinement head.
    let q = rand_arr(&mut rng, &[c, k, k]);
    let r = rand_arr(&mut rng, &[c, k, k]);
    let m = model.clone();
    let report = check_gradients(&[q, r], 1e-5, move |tape, vars| {
        let bound = m.bind(tape);
        let ism = bound.ism_modulate(tape, vars[0], vars[1]).unwrap();
        let (confidence, refine) = bound.rcnn_forward(tape, ism).unwrap();
        let a = tape.mean(confidence);
        let b = tape.mean(refine);
        tape.add(a, b)
    });
    println!(
        "instance-level modulation + refinement head:   {} entries, max relative error {:.2e}",
        report.elements_checked, report.max_rel_err
    );
    assert!(report.max_rel_err < 1e-4);

    println!("\nall analytic gradients agree with finite differences");
}
