//! Seeded generator of small synthetic video sequences with ground truth.
//!
//! Sequences show a bright rectangular target blob following a random-walk
//! trajectory over a noisy background, with optional look-alike distractor
//! blobs, absence windows (target leaves the scene), and a gradual size
//! sweep. A pair generator produces an infrared-like (grayscale) and a
//! visible-like (color) view of the same scene, deliberately offset in
//! space and time to emulate unaligned sensor rigs.
//!
//! Everything is driven by a named, portable random generator
//! (ChaCha8), so identical configurations reproduce byte-identical frames
//! and annotations on every platform. The generated annotations are
//! honest: the challenge tags you plant through config knobs are exactly
//! the ones the annotation-side classifier derives back out.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::annotations::{
    manifest_path, sequence_dir, sequence_id, write_sequence_dir, Attribute, DatasetSplit,
    Modality, SequenceAnnotation, SequencePair, SplitName, TcTier,
};
use crate::geometry::{iou, BoundingBox};
use crate::image::{frame_file_name, RasterImage};
use crate::metrics::FrameState;

/// Errors from sequence generation or benchmark assembly.
#[derive(Debug, Error)]
pub enum SynthError {
    #[error("frame size {0}x{1} too small; each side must be at least 32")]
    FrameTooSmall(usize, usize),
    #[error("sequence must have at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("target size range ({0}, {1}) is invalid (need 2 <= min <= max)")]
    BadSizeRange(f64, f64),
    #[error("target of size {size} px cannot fit in a {height}x{width} frame with offsets")]
    TargetCannotFit {
        size: f64,
        height: usize,
        width: usize,
    },
    #[error("absence span ({0}, {1}) is empty or exceeds the {2}-frame sequence")]
    BadAbsenceSpan(usize, usize, usize),
    #[error("{name} must lie in [0, 1], got {value}")]
    OutOfUnitRange { name: &'static str, value: f64 },
    #[error("could not place distractor {index} without overlapping the target trajectory")]
    DistractorPlacement { index: usize },
    #[error("thermal-crossover tier set without the TC attribute")]
    TierWithoutTc,
    #[error("split sizes must each be at least 1, got train={0} val={1} test={2}")]
    BadSplitCounts(usize, usize, usize),
    #[error("output path {0} already exists; refusing to overwrite")]
    PathCollision(PathBuf),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Annotation(#[from] crate::annotations::AnnotationError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Target motion: fixed step length with occasional direction resampling.
#[derive(Clone, Copy, Debug)]
pub struct MotionModel {
    /// Distance the target center moves per frame, in pixels.
    pub step_px: f64,
    /// Per-frame probability of picking a fresh random heading.
    pub direction_change_prob: f64,
}

/// Misalignment applied to the visible view relative to the infrared one.
#[derive(Clone, Copy, Debug, Default)]
pub struct ModalityOffset {
    /// Spatial shift (dx, dy) of the visible scene, in pixels.
    pub spatial: (f64, f64),
    /// Temporal shift in frames: the visible view at frame `t` shows what
    /// the infrared view shows at frame `t - temporal`.
    pub temporal: i64,
}

/// Full description of one synthetic sequence (or pair).
#[derive(Clone, Debug)]
pub struct SynthConfig {
    /// Frame size as (height, width); each side at least 32.
    pub frame_size: (usize, usize),
    /// Number of output frames per modality.
    pub num_frames: usize,
    /// Target scale (side length) range in pixels; swept linearly from min
    /// to max over the sequence.
    pub target_size_range: (f64, f64),
    pub motion: MotionModel,
    /// Number of static look-alike blobs in the scene.
    pub distractor_count: usize,
    /// Appearance similarity of distractors to the target in [0, 1];
    /// 1 means pixel-identical coloring.
    pub distractor_similarity: f64,
    /// Half-open frame intervals `[start, end)` during which the target is
    /// absent from the scene.
    pub absence_spans: Vec<(usize, usize)>,
    /// Misalignment of the visible view when generating pairs.
    pub modality_offset: ModalityOffset,
    /// Background noise amplitude in [0, 1].
    pub noise_level: f64,
    pub seed: u64,
    /// Modality rendered by [`generate_sequence`]; pairs render both.
    pub modality: Modality,
    /// Hand-assigned challenge tags copied into the sequence metadata.
    pub manual_attributes: BTreeSet<Attribute>,
    /// Thermal-crossover difficulty tier; requires the TC tag.
    pub tc_tier: Option<TcTier>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frame_size: (64, 64),
            num_frames: 60,
            target_size_range: (10.0, 10.0),
            motion: MotionModel {
                step_px: 2.0,
                direction_change_prob: 0.15,
            },
            distractor_count: 0,
            distractor_similarity: 0.0,
            absence_spans: Vec::new(),
            modality_offset: ModalityOffset::default(),
            noise_level: 0.1,
            seed: 42,
            modality: Modality::Infrared,
            manual_attributes: BTreeSet::new(),
            tc_tier: None,
        }
    }
}

/// Margin beyond the half-size kept between the target center and the frame
/// border, leaving room for the rendered falloff rim.
const BORDER_MARGIN: f64 = 3.0;

impl SynthConfig {
    /// Checks every structural invariant of the configuration.
    pub fn validate(&self) -> Result<(), SynthError> {
        let (h, w) = self.frame_size;
        if h < 32 || w < 32 {
            return Err(SynthError::FrameTooSmall(h, w));
        }
        if self.num_frames < 2 {
            return Err(SynthError::TooFewFrames(self.num_frames));
        }
        let (smin, smax) = self.target_size_range;
        if !(2.0..=smax).contains(&smin) || !smax.is_finite() {
            return Err(SynthError::BadSizeRange(smin, smax));
        }
        let (dx, dy) = self.modality_offset.spatial;
        let need_w = smax + 2.0 * BORDER_MARGIN + dx.abs();
        let need_h = smax + 2.0 * BORDER_MARGIN + dy.abs();
        if need_w > w as f64 || need_h > h as f64 {
            return Err(SynthError::TargetCannotFit {
                size: smax,
                height: h,
                width: w,
            });
        }
        for &(start, end) in &self.absence_spans {
            if start >= end || end > self.num_frames {
                return Err(SynthError::BadAbsenceSpan(start, end, self.num_frames));
            }
        }
        for (name, value) in [
            ("distractor_similarity", self.distractor_similarity),
            ("noise_level", self.noise_level),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::OutOfUnitRange { name, value });
            }
        }
        if self.tc_tier.is_some() && !self.manual_attributes.contains(&Attribute::Tc) {
            return Err(SynthError::TierWithoutTc);
        }
        Ok(())
    }

    fn absent_at(&self, t: usize) -> bool {
        self.absence_spans
            .iter()
            .any(|&(start, end)| t >= start && t < end)
    }
}

/// One generated sequence: raw frames plus the matching annotation.
#[derive(Clone, Debug)]
pub struct SynthSequence {
    pub frames: Vec<RasterImage>,
    pub annotation: SequenceAnnotation,
}

/// Deterministic seed derivation for independent substreams.
///
/// SplitMix64 finalization of `master ^ mix(tag)`: different tags yield
/// statistically independent 64-bit seeds while staying reproducible.
pub(crate) fn derive_seed(master: u64, tag: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master ^ mix(tag))
}

// Substream tags; fixed constants so layouts never shift between versions.
const TAG_TRAJECTORY: u64 = 1;
const TAG_DISTRACTORS: u64 = 2;
const TAG_NOISE_IR: u64 = 3;
const TAG_NOISE_VIS: u64 = 4;

/// Scene colors per modality: background base and target peak, one entry
/// per channel.
fn palette(modality: Modality) -> (Vec<f64>, Vec<f64>) {
    match modality {
        Modality::Infrared => (vec![40.0], vec![235.0]),
        Modality::Visible => (vec![70.0, 90.0, 110.0], vec![225.0, 70.0, 60.0]),
    }
}

/// Distractor peak color: interpolates from a drab neutral toward the
/// target's own color as similarity approaches 1.
fn distractor_color(modality: Modality, similarity: f64) -> Vec<f64> {
    let (_, target) = palette(modality);
    let neutral: Vec<f64> = match modality {
        Modality::Infrared => vec![130.0],
        Modality::Visible => vec![120.0, 120.0, 120.0],
    };
    neutral
        .iter()
        .zip(&target)
        .map(|(n, t)| n + similarity * (t - n))
        .collect()
}

/// Target center + side length per trajectory tick.
#[derive(Clone, Copy, Debug)]
struct TrajectoryPoint {
    cx: f64,
    cy: f64,
    size: f64,
}

impl TrajectoryPoint {
    fn boxed(&self) -> BoundingBox {
        BoundingBox::from_center(self.cx, self.cy, self.size, self.size)
            .expect("trajectory stays inside the frame")
    }
}

/// Random-walk trajectory of `len` ticks inside the motion bounds.
///
/// The center bounces off the walls by reflection; the side length sweeps
/// linearly across the configured range over the whole trajectory.
fn build_trajectory(cfg: &SynthConfig, len: usize) -> Vec<TrajectoryPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_TRAJECTORY));
    let (h, w) = (cfg.frame_size.0 as f64, cfg.frame_size.1 as f64);
    let (smin, smax) = cfg.target_size_range;
    let (dx_off, dy_off) = cfg.modality_offset.spatial;
    let margin = smax / 2.0 + BORDER_MARGIN;
    // Keep both views in-frame: shrink the roaming band by the spatial offset.
    let x_lo = margin + (-dx_off).max(0.0);
    let x_hi = (w - margin) - dx_off.max(0.0);
    let y_lo = margin + (-dy_off).max(0.0);
    let y_hi = (h - margin) - dy_off.max(0.0);

    let mut cx = rng.gen_range(x_lo..=x_hi);
    let mut cy = rng.gen_range(y_lo..=y_hi);
    let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    let mut points = Vec::with_capacity(len);
    for tick in 0..len {
        let frac = if len > 1 {
            tick as f64 / (len - 1) as f64
        } else {
            0.0
        };
        points.push(TrajectoryPoint {
            cx,
            cy,
            size: smin + frac * (smax - smin),
        });
        if rng.gen_range(0.0..1.0) < cfg.motion.direction_change_prob {
            heading = rng.gen_range(0.0..std::f64::consts::TAU);
        }
        cx = reflect(cx + cfg.motion.step_px * heading.cos(), x_lo, x_hi);
        cy = reflect(cy + cfg.motion.step_px * heading.sin(), y_lo, y_hi);
    }
    points
}

/// Reflects `v` into `[lo, hi]` (at most a handful of bounces for sane steps).
fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(hi > lo);
    for _ in 0..8 {
        if v < lo {
            v = 2.0 * lo - v;
        } else if v > hi {
            v = 2.0 * hi - v;
        } else {
            return v;
        }
    }
    v.clamp(lo, hi)
}

/// Fraction of the minimum target size bounding distractor side lengths.
/// Decoys stay visibly smaller than the target so rejection placement can
/// succeed even when the target's roaming band covers most of the frame.
const DISTRACTOR_SIZE_FRAC: (f64, f64) = (0.5, 0.8);

/// Static distractor geometry, placed by rejection so ground truth stays
/// unambiguous (IoU with the target below 0.1 on every trajectory tick).
fn place_distractors(
    cfg: &SynthConfig,
    trajectory: &[TrajectoryPoint],
) -> Result<Vec<BoundingBox>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_DISTRACTORS));
    let (h, w) = (cfg.frame_size.0 as f64, cfg.frame_size.1 as f64);
    let smin = cfg.target_size_range.0;
    let (dx_off, dy_off) = cfg.modality_offset.spatial;

    let mut placed: Vec<BoundingBox> = Vec::with_capacity(cfg.distractor_count);
    'outer: for index in 0..cfg.distractor_count {
        for _attempt in 0..500 {
            let size = rng.gen_range(smin * DISTRACTOR_SIZE_FRAC.0..=smin * DISTRACTOR_SIZE_FRAC.1);
            // Keep both modality views of the decoy fully in frame, using
            // its own footprint rather than the target's.
            let margin = size / 2.0 + BORDER_MARGIN;
            let x_lo = margin + (-dx_off).max(0.0);
            let x_hi = (w - margin) - dx_off.max(0.0);
            let y_lo = margin + (-dy_off).max(0.0);
            let y_hi = (h - margin) - dy_off.max(0.0);
            let cx = rng.gen_range(x_lo..=x_hi);
            let cy = rng.gen_range(y_lo..=y_hi);
            let candidate = BoundingBox::from_center(cx, cy, size, size)
                .expect("distractor candidate inside the frame");
            let clashes_target = trajectory
                .iter()
                .any(|p| iou(&p.boxed(), &candidate) >= 0.1);
            let clashes_peer = placed.iter().any(|b| iou(b, &candidate) >= 0.1);
            if !clashes_target && !clashes_peer {
                placed.push(candidate);
                continue 'outer;
            }
        }
        return Err(SynthError::DistractorPlacement { index });
    }
    Ok(placed)
}

/// Paints a soft-edged rectangle: full `color` where the pixel center lies
/// inside `rect`, Gaussian falloff just outside it.
fn paint_blob(img: &mut RasterImage, rect: &BoundingBox, color: &[f64]) {
    const SIGMA: f64 = 0.7;
    let reach = 3.0;
    let y_from = (rect.y1 - reach).floor().max(0.0) as usize;
    let y_to = ((rect.y2 + reach).ceil() as usize).min(img.height());
    let x_from = (rect.x1 - reach).floor().max(0.0) as usize;
    let x_to = ((rect.x2 + reach).ceil() as usize).min(img.width());
    for py in y_from..y_to {
        for px in x_from..x_to {
            let (sx, sy) = (px as f64 + 0.5, py as f64 + 0.5);
            let ox = (rect.x1 - sx).max(sx - rect.x2).max(0.0);
            let oy = (rect.y1 - sy).max(sy - rect.y2).max(0.0);
            let d2 = ox * ox + oy * oy;
            let coverage = if d2 == 0.0 {
                1.0
            } else {
                (-d2 / (2.0 * SIGMA * SIGMA)).exp()
            };
            if coverage < 1e-3 {
                continue;
            }
            for (c, peak) in color.iter().enumerate() {
                let bg = img.get(py, px, c) as f64;
                let v = bg + coverage * (peak - bg);
                img.set(py, px, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
}

/// Renders one frame: noisy background, distractors, then the target.
#[allow(clippy::too_many_arguments)]
fn render_frame(
    cfg: &SynthConfig,
    modality: Modality,
    noise_rng: &mut ChaCha8Rng,
    distractors: &[BoundingBox],
    target: Option<&BoundingBox>,
    shift: (f64, f64),
) -> RasterImage {
    let (h, w) = cfg.frame_size;
    let (bg, target_color) = palette(modality);
    let channels = modality.channels();
    let mut img = RasterImage::filled(h, w, channels, 0);
    // Noise is integer-quantized up front so written bytes are exact.
    let amp = (cfg.noise_level * 48.0).round() as i32;
    for y in 0..h {
        for x in 0..w {
            for (c, base) in bg.iter().enumerate() {
                let delta = if amp > 0 {
                    noise_rng.gen_range(-amp..=amp)
                } else {
                    0
                };
                img.set(y, x, c, (*base as i32 + delta).clamp(0, 255) as u8);
            }
        }
    }
    let d_color = distractor_color(modality, cfg.distractor_similarity);
    for rect in distractors {
        let shifted = BoundingBox::new(
            rect.x1 + shift.0,
            rect.y1 + shift.1,
            rect.x2 + shift.0,
            rect.y2 + shift.1,
        )
        .expect("shifted distractor stays valid");
        paint_blob(&mut img, &shifted, &d_color);
    }
    if let Some(rect) = target {
        paint_blob(&mut img, rect, &target_color);
    }
    img
}

/// Renders one modality of the scene described by `cfg`.
///
/// `view_start` indexes into the shared trajectory (temporal offset),
/// `shift` is the spatial offset, and `noise_tag` picks the per-view noise
/// substream.
fn render_view(
    cfg: &SynthConfig,
    modality: Modality,
    pair_id: &str,
    trajectory: &[TrajectoryPoint],
    distractors: &[BoundingBox],
    view_start: usize,
    shift: (f64, f64),
    noise_tag: u64,
) -> Result<SynthSequence, SynthError> {
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, noise_tag));
    let mut frames = Vec::with_capacity(cfg.num_frames);
    let mut states = Vec::with_capacity(cfg.num_frames);
    for t in 0..cfg.num_frames {
        let point = trajectory[t + view_start];
        let target = if cfg.absent_at(t) {
            None
        } else {
            let b = point.boxed();
            Some(
                BoundingBox::new(
                    b.x1 + shift.0,
                    b.y1 + shift.1,
                    b.x2 + shift.0,
                    b.y2 + shift.1,
                )
                .expect("shifted target stays valid"),
            )
        };
        frames.push(render_frame(
            cfg,
            modality,
            &mut noise_rng,
            distractors,
            target.as_ref(),
            shift,
        ));
        states.push(match target {
            Some(rect) => FrameState::visible(rect),
            None => FrameState::absent(),
        });
    }
    let annotation = SequenceAnnotation::new(
        sequence_id(pair_id, modality),
        modality,
        states,
        cfg.manual_attributes.clone(),
        cfg.tc_tier,
    )?;
    Ok(SynthSequence { frames, annotation })
}

/// Generates a single sequence in the configured modality.
pub fn generate_sequence(cfg: &SynthConfig) -> Result<SynthSequence, SynthError> {
    cfg.validate()?;
    let trajectory = build_trajectory(cfg, cfg.num_frames);
    let distractors = place_distractors(cfg, &trajectory)?;
    let noise_tag = match cfg.modality {
        Modality::Infrared => TAG_NOISE_IR,
        Modality::Visible => TAG_NOISE_VIS,
    };
    render_view(
        cfg,
        cfg.modality,
        "solo",
        &trajectory,
        &distractors,
        0,
        (0.0, 0.0),
        noise_tag,
    )
}

/// An unaligned two-modality recording of one scene.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub pair_id: String,
    pub infrared: SynthSequence,
    pub visible: SynthSequence,
}

impl SynthPair {
    /// The paired annotations as a dataset-side [`SequencePair`].
    pub fn annotation_pair(&self) -> Result<SequencePair, SynthError> {
        Ok(SequencePair::new(
            self.pair_id.clone(),
            self.infrared.annotation.clone(),
            self.visible.annotation.clone(),
        )?)
    }
}

/// Generates an infrared + visible pair of the same scene.
///
/// Both views draw from one shared trajectory; the visible view is shifted
/// spatially by `modality_offset.spatial` and temporally so that its frame
/// `t` shows the scene state of infrared frame `t - temporal`. Each view is
/// annotated independently from its own rendered truth.
pub fn generate_pair(cfg: &SynthConfig, pair_id: &str) -> Result<SynthPair, SynthError> {
    cfg.validate()?;
    let dt = cfg.modality_offset.temporal;
    let len = cfg.num_frames + dt.unsigned_abs() as usize;
    let trajectory = build_trajectory(cfg, len);
    let distractors = place_distractors(cfg, &trajectory)?;
    // Infrared leads when dt > 0: ir frame s shows trajectory tick s + dt,
    // so vis[t] = traj[t] matches ir[t - dt] = traj[t].
    let (ir_start, vis_start) = if dt >= 0 {
        (dt as usize, 0)
    } else {
        (0, (-dt) as usize)
    };
    let infrared = render_view(
        cfg,
        Modality::Infrared,
        pair_id,
        &trajectory,
        &distractors,
        ir_start,
        (0.0, 0.0),
        TAG_NOISE_IR,
    )?;
    let visible = render_view(
        cfg,
        Modality::Visible,
        pair_id,
        &trajectory,
        &distractors,
        vis_start,
        cfg.modality_offset.spatial,
        TAG_NOISE_VIS,
    )?;
    Ok(SynthPair {
        pair_id: pair_id.to_string(),
        infrared,
        visible,
    })
}

/// Writes one generated pair into the on-disk dataset layout.
pub fn write_pair(root: &Path, split: SplitName, pair: &SynthPair) -> Result<(), SynthError> {
    for seq in [&pair.infrared, &pair.visible] {
        let dir = sequence_dir(root, split, &pair.pair_id, seq.annotation.modality());
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (t, frame) in seq.frames.iter().enumerate() {
            frame.save(&dir.join(frame_file_name(t, frame.channels())))?;
        }
        write_sequence_dir(&dir, &seq.annotation)?;
    }
    Ok(())
}

/// The three splits written by [`make_benchmark`], loaded back from disk.
#[derive(Debug)]
pub struct Benchmark {
    pub root: PathBuf,
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
}

/// Generates a full train/val/test benchmark tree under `root`.
///
/// Pair seeds derive from the master seed and a global pair index, so
/// splits are disjoint in both identity and randomness. `root` must not
/// already exist. Every written annotation is read back before returning.
pub fn make_benchmark(
    root: &Path,
    num_train: usize,
    num_val: usize,
    num_test: usize,
    template: &SynthConfig,
    master_seed: u64,
) -> Result<Benchmark, SynthError> {
    if num_train < 1 || num_val < 1 || num_test < 1 {
        return Err(SynthError::BadSplitCounts(num_train, num_val, num_test));
    }
    template.validate()?;
    if root.exists() {
        return Err(SynthError::PathCollision(root.to_path_buf()));
    }
    std::fs::create_dir_all(root).map_err(io_err(root))?;

    let mut next_pair = 0usize;
    for (split, count) in [
        (SplitName::Train, num_train),
        (SplitName::Val, num_val),
        (SplitName::Test, num_test),
    ] {
        let mut manifest = String::new();
        for _ in 0..count {
            let pair_id = format!("pair_{next_pair:04}");
            let mut cfg = template.clone();
            cfg.seed = derive_seed(master_seed, next_pair as u64);
            let pair = generate_pair(&cfg, &pair_id)?;
            write_pair(root, split, &pair)?;
            manifest.push_str(&pair_id);
            manifest.push('\n');
            next_pair += 1;
        }
        let path = manifest_path(root, split);
        std::fs::write(&path, manifest).map_err(io_err(&path))?;
    }

    Ok(Benchmark {
        root: root.to_path_buf(),
        train: crate::annotations::load_split(root, SplitName::Train)?,
        val: crate::annotations::load_split(root, SplitName::Val)?,
        test: crate::annotations::load_split(root, SplitName::Test)?,
    })
}

/// Named configuration presets for benchmark generation.
///
/// Each preset plants a specific challenge: `easy` is a clean slow target,
/// `fm` forces fast motion (larger frames so >60 px jumps fit), `tc` adds
/// near-identical distractors with the thermal-crossover tag, `ov` inserts
/// absence windows, and `mixed` combines absence, scale sweep, and mild
/// distractors at the default frame size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Easy,
    Fm,
    Tc,
    Ov,
    Mixed,
}

impl Profile {
    pub const ALL: [Profile; 5] = [
        Profile::Easy,
        Profile::Fm,
        Profile::Tc,
        Profile::Ov,
        Profile::Mixed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Profile::Easy => "easy",
            Profile::Fm => "fm",
            Profile::Tc => "tc",
            Profile::Ov => "ov",
            Profile::Mixed => "mixed",
        }
    }

    /// The configuration this profile stands for.
    pub fn config(&self, seed: u64) -> SynthConfig {
        let base = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        match self {
            Profile::Easy => SynthConfig {
                motion: MotionModel {
                    step_px: 1.5,
                    direction_change_prob: 0.1,
                },
                modality_offset: ModalityOffset {
                    spatial: (2.0, -1.0),
                    temporal: 1,
                },
                ..base
            },
            Profile::Fm => SynthConfig {
                frame_size: (128, 128),
                num_frames: 40,
                motion: MotionModel {
                    step_px: 61.0,
                    direction_change_prob: 0.15,
                },
                modality_offset: ModalityOffset {
                    spatial: (2.0, -1.0),
                    temporal: 1,
                },
                ..base
            },
            Profile::Tc => SynthConfig {
                distractor_count: 3,
                distractor_similarity: 0.9,
                noise_level: 0.15,
                manual_attributes: BTreeSet::from([Attribute::Tc]),
                tc_tier: Some(TcTier::Med),
                modality_offset: ModalityOffset {
                    spatial: (2.0, -1.0),
                    temporal: 1,
                },
                ..base
            },
            Profile::Ov => SynthConfig {
                absence_spans: vec![(20, 30), (45, 50)],
                modality_offset: ModalityOffset {
                    spatial: (2.0, -1.0),
                    temporal: 1,
                },
                ..base
            },
            Profile::Mixed => SynthConfig {
                // Two to three feature cells at the tracker's stride-8
                // resolution, so the query crop carries real spatial
                // structure; the 16 -> 24 sweep keeps the area ratio at
                // 2.25, planting scale variation.
                target_size_range: (16.0, 24.0),
                motion: MotionModel {
                    step_px: 2.5,
                    direction_change_prob: 0.2,
                },
                distractor_count: 2,
                distractor_similarity: 0.6,
                absence_spans: vec![(25, 33)],
                noise_level: 0.15,
                modality_offset: ModalityOffset {
                    spatial: (3.0, -2.0),
                    temporal: 2,
                },
                ..base
            },
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Profile::Easy),
            "fm" => Ok(Profile::Fm),
            "tc" => Ok(Profile::Tc),
            "ov" => Ok(Profile::Ov),
            "mixed" => Ok(Profile::Mixed),
            other => Err(format!(
                "unknown profile '{other}' (expected easy, fm, tc, ov, or mixed)"
            )),
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
