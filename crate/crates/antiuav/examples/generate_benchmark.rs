//! Generates a small synthetic benchmark and walks the resulting tree: the
//! split manifests, the paired infrared/visible sequence directories, and
//! the annotation that travels with each sequence.
//!
//! ```text
//! cargo run --example generate_benchmark
//! ```

use antiuav::annotations::dataset_statistics;
use antiuav::synth::{make_benchmark, Profile};

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path().join("bench");

    // Every sequence, box, and pixel derives from this one seed; the same
    // call always produces a byte-identical tree.
    let seed = 42;
    let profile = Profile::Mixed;
    let bench = make_benchmark(&root, 2, 1, 1, &profile.config(seed), seed).unwrap();

    println!("generated '{profile}' benchmark at {}\n", bench.root.display());
    for (name, split) in [
        ("train", &bench.train),
        ("val", &bench.val),
        ("test", &bench.test),
    ] {
        let ids: Vec<&str> = split.pairs().iter().map(|p| p.pair_id()).collect();
        println!("  {name}: {}", ids.join(", "));
    }

    // One pair = two synchronized sequences (infrared PGM + visible PPM)
    // over the same scene, each with its own annotation.
    let pair = &bench.train.pairs()[0];
    println!("\nlayout of {}:", pair.pair_id());
    let pair_dir = root.join("train").join(pair.pair_id());
    let mut entries: Vec<_> = walk(&pair_dir);
    entries.sort();
    for (i, path) in entries.iter().enumerate() {
        if i < 4 || i >= entries.len() - 4 {
            println!("  {}", path.strip_prefix(&root).unwrap().display());
        } else if i == 4 {
            println!("  ... ({} files total)", entries.len());
        }
    }

    let ir = pair.infrared();
    println!(
        "\n{}: {} frames, {} visible, attributes {:?}",
        ir.sequence_id(),
        ir.len(),
        ir.frames().iter().filter(|f| f.exist()).count(),
        ir.all_attributes(),
    );
    for (t, f) in ir.frames().iter().enumerate().take(3) {
        match f.rect() {
            Some(r) => println!(
                "  frame {t}: visible at ({:.1}, {:.1})-({:.1}, {:.1})",
                r.x1, r.y1, r.x2, r.y2
            ),
            None => println!("  frame {t}: absent"),
        }
    }

    // A split knows its own statistics: frame counts, position/scale
    // histograms, and how often each challenge attribute occurs.
    let stats = dataset_statistics(&bench.train);
    println!(
        "\ntrain split: {} sequences, {} frames ({} visible), mean target scale {:.1} px",
        stats.sequences,
        stats.total_frames,
        stats.visible_frames,
        stats.mean_scale.unwrap_or(f64::NAN),
    );
    println!("attribute counts: {:?}", stats.attribute_counts);
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}
