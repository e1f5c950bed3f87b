//! Temporary rehearsal of the desk-scale training benchmark. Not part of
//! the deliverable; deleted before commit.

use antiuav::eval::load_sequence;
use antiuav::geometry::{iou, BoundingBox};
use antiuav::synth::{make_benchmark, Profile};
use antiuav::tape::{sigmoid_scalar, Arr, Tape};
use antiuav::tracker::anchors::{decode_box_delta, generate_anchors, select_proposals, AnchorLayout};
use antiuav::tracker::infer::make_query;
use antiuav::tracker::{Model, ModelConfig};
use antiuav::train::{fit, Strategy, TrainConfig, TrainSequence};
use antiuav::Modality;

fn print_grid(title: &str, h: usize, w: usize, v: &[f64], mark: (usize, usize)) {
    println!("  {title} (marked cell = target):");
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| {
                let s = format!("{:>7.3}", v[y * w + x]);
                if (y, x) == mark {
                    format!("[{s}]")
                } else {
                    format!(" {s} ")
                }
            })
            .collect();
        println!("   {}", row.join(""));
    }
}

fn grids(model: &Model, seq: &TrainSequence, t: usize, label: &str) {
    let init = seq.truth.iter().position(|f| f.exist()).unwrap();
    let init_rect = *seq.truth[init].rect().unwrap();
    let query = make_query(model, &seq.frames[init], &init_rect, "").unwrap();
    let gt = *seq.truth[t].rect().unwrap();
    let (gcx, gcy) = gt.center();
    let cfg = model.config();
    let stride = cfg.stride as f64;
    let mark = (
        (gcy / stride) as usize,
        (gcx / stride) as usize,
    );
    println!(
        "[{label}] frame {t}: gt center ({gcx:.1},{gcy:.1}) size {:.1}x{:.1} -> cell {:?}",
        gt.width(),
        gt.height(),
        mark
    );

    // Query kernel spatial structure: per-channel spatial std / |mean|.
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let q = tape.input(query.data.clone());
    let kernel = {
        // Reach the projected kernel the same way csm_modulate does.
        let w = bound.var("csm.query_proj.w");
        let b = bound.var("csm.query_proj.b");
        let c = tape.conv2d(q, w, 1, 0);
        tape.add_bias_chw(c, b)
    };
    let kv = tape.value(kernel);
    let (kc, kk) = (kv.shape()[0], kv.shape()[1] * kv.shape()[2]);
    let mut flat_ratio = 0.0;
    for c in 0..kc {
        let plane = &kv.data()[c * kk..(c + 1) * kk];
        let mean = plane.iter().sum::<f64>() / kk as f64;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / kk as f64;
        flat_ratio += var.sqrt() / (mean.abs() + 1e-9);
    }
    println!("  kernel spatial-std/|mean| averaged over channels: {:.4}", flat_ratio / kc as f64);

    let frame = &seq.frames[t];
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let feat = bound.extract_features(&mut tape, frame).unwrap();
    let q = tape.input(query.data.clone());
    let csm = bound.csm_modulate(&mut tape, q, feat.var).unwrap();
    let (scores, _deltas) = bound.rpn_forward(&mut tape, csm.clone()).unwrap();

    let fv = tape.value(feat.var);
    let (c, h, w) = (fv.shape()[0], fv.shape()[1], fv.shape()[2]);
    let norm_grid = |a: &antiuav::tape::Arr| -> Vec<f64> {
        let mut g = vec![0.0; h * w];
        for ci in 0..a.shape()[0] {
            for i in 0..h * w {
                let v = a.data()[ci * h * w + i];
                g[i] += v * v;
            }
        }
        g.iter().map(|v| v.sqrt()).collect()
    };
    let _ = c;
    print_grid("backbone |feature|", h, w, &norm_grid(fv), mark);
    print_grid("csm |response|", h, w, &norm_grid(tape.value(csm.var)), mark);
    let sv = tape.value(scores);
    let a_cnt = sv.shape()[0];
    let mut obj = vec![f64::NEG_INFINITY; h * w];
    for a in 0..a_cnt {
        for i in 0..h * w {
            obj[i] = obj[i].max(sv.data()[a * h * w + i]);
        }
    }
    print_grid("objectness max-logit", h, w, &obj, mark);
}

fn diagnose(model: &Model, seq: &TrainSequence, label: &str) {
    let init = seq.truth.iter().position(|f| f.exist()).unwrap();
    let init_rect = *seq.truth[init].rect().unwrap();
    let query = make_query(model, &seq.frames[init], &init_rect, "").unwrap();
    let cfg = model.config();

    let mut recalls = Vec::new();
    let mut final_ious = Vec::new();
    let mut vis_scores = Vec::new();
    let mut invis_scores = Vec::new();
    for (t, frame) in seq.frames.iter().enumerate() {
        if t <= init {
            continue;
        }
        let image_size = (frame.shape()[1], frame.shape()[2]);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let feat = bound.extract_features(&mut tape, frame).unwrap();
        let q = tape.input(query.data.clone());
        let csm = bound.csm_modulate(&mut tape, q, feat.var).unwrap();
        let (scores, deltas) = bound.rpn_forward(&mut tape, csm).unwrap();
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
        )
        .unwrap();

        let gt = seq.truth[t].rect().copied();
        if let Some(gt) = gt {
            let recall = proposals
                .iter()
                .map(|p| iou(&p.rect, &gt))
                .fold(0.0f64, f64::max);
            recalls.push(recall);
        }

        let stride = feat.stride as f64;
        let mut best: Option<(f64, BoundingBox)> = None;
        for p in &proposals {
            let fr = BoundingBox::new(
                p.rect.x1 / stride,
                p.rect.y1 / stride,
                p.rect.x2 / stride,
                p.rect.y2 / stride,
            )
            .unwrap();
            let roi = tape.roi_align(feat.var, &fr, cfg.roi_size);
            let ism = bound.ism_modulate(&mut tape, q, roi).unwrap();
            let (conf, refine) = bound.rcnn_forward(&mut tape, ism).unwrap();
            let logit = tape.value(conf).item();
            let d = tape.value(refine).data();
            let refined = decode_box_delta(&p.rect, &[d[0], d[1], d[2], d[3]], image_size);
            if best.as_ref().is_none_or(|(top, _)| logit > *top) {
                best = Some((logit, refined));
            }
        }
        let (logit, rect) = best.unwrap();
        let score = sigmoid_scalar(logit);
        if let Some(gt) = gt {
            final_ious.push(iou(&rect, &gt));
            vis_scores.push(score);
        } else {
            invis_scores.push(score);
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let frac_ge = |v: &[f64], t: f64| v.iter().filter(|x| **x >= t).count() as f64 / v.len().max(1) as f64;
    println!(
        "[{label}] frames vis {} invis {} | recall@{} mean {:.3} frac>=0.5 {:.2} | final IoU mean {:.3} | score vis {:.3} invis {:.3}",
        vis_scores.len(),
        invis_scores.len(),
        cfg.n_pnum,
        mean(&recalls),
        frac_ge(&recalls, 0.5),
        mean(&final_ious),
        mean(&vis_scores),
        mean(&invis_scores),
    );
}

fn manual_loop(train: &[TrainSequence], steps: usize, lr: f64, n_pnum: usize) {
    use antiuav::train::{assign_anchor_targets, compute_losses, sample_batch, LossConfig, Sgd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut model = Model::init(
        ModelConfig {
            n_pnum,
            ..ModelConfig::default()
        },
        7,
    );
    let mut opt = Sgd::new(0.9, 1e-4);
    let cfg = LossConfig {
        strategy: Strategy::Dfsc,
        alpha: 0.25,
        beta: 1.0,
        normalize_cross: false,
    };
    let (h, w) = (train[0].frames[0].shape()[1], train[0].frames[0].shape()[2]);
    let (fh, fw) = model.config().feature_map_size(h, w);
    let anchors = generate_anchors(fh, fw, model.config().stride, &model.config().anchor);

    let group_max = |m: &Model| -> Vec<(String, f64)> {
        let mut best: std::collections::BTreeMap<String, f64> = Default::default();
        for (name, arr) in m.params() {
            let prefix = name.split('.').take(2).collect::<Vec<_>>().join(".");
            let mx = arr.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let e = best.entry(prefix).or_insert(0.0);
            *e = e.max(mx);
        }
        best.into_iter().collect()
    };

    for step in 0..steps {
        let mut brng = ChaCha8Rng::seed_from_u64(424242 ^ step as u64);
        let batch = sample_batch(train, 2, &mut brng).unwrap();
        let desc: Vec<String> = batch
            .entries()
            .iter()
            .map(|e| {
                format!(
                    "{}:{}",
                    e.sequence_id,
                    if e.search_truth.exist() { "vis" } else { "abs" }
                )
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + step as u64);
        let targets: Vec<_> = batch
            .entries()
            .iter()
            .map(|e| assign_anchor_targets(&anchors, &e.search_truth, &mut rng))
            .collect();
        let mut named_grads: std::collections::BTreeMap<String, Arr> = Default::default();
        let verbose = step < 8 || step % 10 == 0 || step + 1 == steps;
        {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            match compute_losses(&mut tape, &bound, &batch, &targets, &cfg, None) {
                Ok(vars) => {
                    let same = tape.value(vars.l_same).item();
                    let ism = tape.value(vars.l_ism).item();
                    let total = tape.value(vars.total).item();
                    let grads = tape.backward(vars.total);
                    let mut gmax: std::collections::BTreeMap<String, f64> = Default::default();
                    for (name, var) in bound.vars() {
                        if let Some(g) = grads.get(var) {
                            let prefix = name.split('.').take(2).collect::<Vec<_>>().join(".");
                            let mx = g.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                            let e = gmax.entry(prefix).or_insert(0.0);
                            *e = e.max(mx);
                            named_grads.insert(name.to_string(), g.clone());
                        }
                    }
                    if verbose || !total.is_finite() || total > 5.0 {
                        println!(
                            "step {step:>3} [{}] same {same:>9.4} ism {ism:>9.4} total {total:>9.4}",
                            desc.join(" ")
                        );
                        print!("      grad-max:");
                        for (k, v) in &gmax {
                            print!(" {k} {v:.2e}");
                        }
                        println!();
                    }
                }
                Err(e) => {
                    println!("step {step}: compute_losses failed: {e}");
                    break;
                }
            }
        }
        opt.step(&mut model, &named_grads, lr);
        if verbose {
            print!("      param-max:");
            for (k, v) in group_max(&model) {
                print!(" {k} {v:.3}");
            }
            println!();
        }
    }
}

fn main() {
    let t0 = std::time::Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path().join("bench");
    let seed = 42;
    let bench = make_benchmark(&root, 8, 2, 2, &Profile::Mixed.config(seed), seed).unwrap();

    let load = |split: &antiuav::DatasetSplit| -> Vec<TrainSequence> {
        split
            .pairs()
            .iter()
            .map(|pair| {
                let ann = pair.modality(Modality::Infrared);
                TrainSequence {
                    sequence_id: ann.sequence_id().to_string(),
                    frames: load_sequence(&root, split.name(), pair.pair_id(), Modality::Infrared, ann)
                        .unwrap(),
                    truth: ann.frames().to_vec(),
                }
            })
            .collect()
    };
    let train = load(&bench.train);
    let val = load(&bench.val);
    println!("data ready at {:.1?}", t0.elapsed());

    let steps: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(300);
    let lr: f64 = std::env::args()
        .nth(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(0.01);
    let n_pnum: usize = std::env::args()
        .nth(3)
        .map(|s| s.parse().unwrap())
        .unwrap_or(16);
    if std::env::args().nth(4).as_deref() == Some("manual") {
        manual_loop(&train, steps, lr, n_pnum);
        return;
    }
    let cfg = TrainConfig {
        strategy: Strategy::Dfsc,
        total_steps: steps,
        base_lr: lr,
        n_pnum,
        val_every: (steps / 6).max(1),
        seed,
        ..TrainConfig::default()
    };
    match fit(&train, &val, ModelConfig::default(), &cfg) {
        Ok((model, log)) => {
            for (i, s) in log.steps.iter().enumerate() {
                if i % (steps / 12).max(1) == 0 || i + 1 == steps {
                    println!(
                        "step {:>4} lr {:.4} same {:>8.4} cross {:>8.4} ism {:>8.4} total {:>8.4} deg {}",
                        s.step, s.lr, s.l_same, s.l_cross, s.l_ism, s.total, s.degenerate_frames
                    );
                }
            }
            for v in &log.val {
                println!("  val @ step {:>4}: mSA {:.4}", v.step, v.msa);
            }
            if let Some(cal) = log.calibration {
                println!(
                    "calibrated theta {:.2} -> val mSA {:.4} (strategy {})",
                    cal.theta,
                    cal.msa,
                    model.config().strategy
                );
            }
            println!("train time {:.1?}", t0.elapsed());
            diagnose(&model, &train[0], "train0");
            diagnose(&model, &val[0], "val0");
            grids(&model, &train[0], 10, "trained/train0");
            let fresh = Model::init(ModelConfig::default(), 7);
            grids(&fresh, &train[0], 10, "untrained/train0");
            println!("total time {:.1?}", t0.elapsed());
        }
        Err(e) => println!("fit failed: {e}"),
    }
}
