//! Shows the on-disk annotation format and the challenge-attribute rules:
//! parses a raw JSON document, re-derives motion/scale/visibility
//! attributes from the boxes, and pairs the two modalities of a scene.
//!
//! ```text
//! cargo run --example annotation_format
//! ```

use std::collections::BTreeSet;

use antiuav::annotations::{pair_modalities, TcTier};
use antiuav::{
    compute_derivable_attributes, parse_annotation, write_annotation, Attribute, BoundingBox,
    FrameState, Modality, SequenceAnnotation,
};

fn main() {
    // The sequence annotation is one JSON object with parallel arrays: a
    // 0/1 visibility flag per frame and a corner box per visible frame
    // (empty array when absent).
    let raw = br#"{
        "exist":   [1, 1, 0, 1],
        "gt_rect": [[10, 20, 40, 60], [15, 20, 45, 60], [], [120, 20, 150, 60]]
    }"#;
    let frames = parse_annotation(raw).unwrap();
    println!("parsed {} frames:", frames.len());
    for (t, f) in frames.iter().enumerate() {
        match f.rect() {
            Some(r) => println!("  frame {t}: visible, {:.0} x {:.0} px", r.width(), r.height()),
            None => println!("  frame {t}: absent"),
        }
    }

    // Writing re-serializes the same structure; a parse/write round trip
    // reproduces the states exactly.
    let rewritten = write_annotation(&frames);
    assert_eq!(parse_annotation(&rewritten).unwrap(), frames);
    println!("\nround trip is exact; serialized form:\n  {}", String::from_utf8(rewritten).unwrap());

    // A full sequence couples the frames with a modality, manual tags
    // (occlusion and thermal crossover cannot be derived from boxes), and
    // an optional crossover difficulty tier.
    let ann = SequenceAnnotation::new(
        "pair_0000_infrared",
        Modality::Infrared,
        frames.clone(),
        BTreeSet::from([Attribute::Tc]),
        Some(TcTier::Med),
    )
    .unwrap();

    // The rest of the attributes come from the geometry itself:
    //   OV - some frame has the target absent,
    //   FM - adjacent visible centers move more than 60 px,
    //   SV - the box area leaves [0.66, 1.5] x the first visible area,
    //   LI - the sequence has more than 400 frames.
    let derived = compute_derivable_attributes(&ann);
    println!("\nmanual attributes:  {:?}", ann.manual_attributes());
    println!("derived attributes: {:?}", derived.attributes);
    println!("all attributes:     {:?}", ann.all_attributes());

    // The frame-2 absence produced OV, and the 105 px jump from frame 1
    // to frame 3 does NOT produce FM: fast motion only compares adjacent
    // frames that are both visible.
    assert!(derived.attributes.contains(&Attribute::Ov));
    assert!(!derived.attributes.contains(&Attribute::Fm));

    // Nudging frame 1 far enough trips both FM (the 0 -> 1 move) and SV
    // (the area band).
    let mut moved = frames;
    moved[1] = FrameState::visible(BoundingBox::new(80.0, 20.0, 190.0, 60.0).unwrap());
    let ann2 = SequenceAnnotation::new(
        "pair_0001_infrared",
        Modality::Infrared,
        moved,
        BTreeSet::new(),
        None,
    )
    .unwrap();
    println!("\nafter moving frame 1: {:?}", ann2.all_attributes());
    assert!(ann2.all_attributes().contains(&Attribute::Fm));
    assert!(ann2.all_attributes().contains(&Attribute::Sv));

    // Modalities pair by a caller-chosen key (here: the sequence id with
    // its modality suffix stripped); unmatched sequences are reported
    // rather than silently dropped.
    let vis = SequenceAnnotation::new(
        "pair_0000_visible",
        Modality::Visible,
        ann.frames().to_vec(),
        BTreeSet::new(),
        None,
    )
    .unwrap();
    let lone = SequenceAnnotation::new(
        "pair_0099_visible",
        Modality::Visible,
        ann.frames().to_vec(),
        BTreeSet::new(),
        None,
    )
    .unwrap();
    let scene_key = |s: &SequenceAnnotation| {
        s.sequence_id()
            .trim_end_matches("_visible")
            .trim_end_matches("_infrared")
            .to_string()
    };
    let outcome = pair_modalities(vec![ann], vec![vis, lone], scene_key).unwrap();
    println!(
        "\npairing: {} complete pair(s), {} unmatched visible sequence(s): {:?}",
        outcome.pairs.len(),
        outcome.unmatched_visible.len(),
        outcome.unmatched_visible
    );
    for pair in &outcome.pairs {
        println!(
            "  {}: infrared {} frames / visible {} frames",
            pair.pair_id(),
            pair.infrared().len(),
            pair.visible().len()
        );
    }
}
