//! Sequence annotations, challenge attributes, modality pairing, and
//! dataset statistics.
//!
//! The on-disk annotation is a small JSON document per sequence:
//!
//! ```json
//! {"exist": [1, 1, 0], "gt_rect": [[10.0, 12.0, 30.0, 40.0], [11.0, 12.0, 31.0, 40.0], []]}
//! ```
//!
//! `exist[t]` flags whether the target is visible on frame `t`; `gt_rect[t]`
//! holds the `[x1, y1, x2, y2]` corners exactly when it is, and is the empty
//! array otherwise. Some historical files spell the box key `get_rect`; the
//! parser accepts both spellings and the writer always emits `gt_rect`.
//!
//! Sequence-level metadata (modality, pair id, manually tagged attributes)
//! lives in a `meta.json` sidecar next to the annotation. Four challenge
//! attributes are re-derivable from the boxes alone (out-of-view, fast
//! motion, scale variation, low resolution); the rest (occlusion, low
//! illumination, thermal crossover and its difficulty tier) require human
//! judgment and are only ever read from metadata.

use crate::geometry::BoundingBox;
use crate::metrics::FrameState;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Sensor modality of a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Infrared,
    Visible,
}

impl Modality {
    /// Directory name of this modality inside a pair directory.
    pub fn dir_name(&self) -> &'static str {
        match self {
            Modality::Infrared => "infrared",
            Modality::Visible => "visible",
        }
    }

    /// Raster channel count: thermal frames are single-channel, visible
    /// frames are RGB.
    pub fn channels(&self) -> usize {
        match self {
            Modality::Infrared => 1,
            Modality::Visible => 3,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl std::str::FromStr for Modality {
    type Err = AnnotationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "infrared" | "ir" => Ok(Modality::Infrared),
            "visible" | "rgb" => Ok(Modality::Visible),
            other => Err(AnnotationError::UnknownModality(other.to_string())),
        }
    }
}

/// Challenge attributes a sequence can carry.
///
/// `Ov`, `Fm`, `Sv` and `Lr` can be re-derived from the annotation geometry
/// (see [`compute_derivable_attributes`]); `Oc`, `Li` and `Tc` are manual
/// tags read from metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Attribute {
    /// Out-of-view: the target fully leaves the frame at least once.
    #[serde(rename = "OV")]
    Ov,
    /// Occlusion (manual tag).
    #[serde(rename = "OC")]
    Oc,
    /// Fast motion: adjacent visible centers move more than 60 px.
    #[serde(rename = "FM")]
    Fm,
    /// Scale variation: box area leaves the band [0.66, 1.5] relative to
    /// the first visible frame.
    #[serde(rename = "SV")]
    Sv,
    /// Low illumination (manual tag).
    #[serde(rename = "LI")]
    Li,
    /// Thermal crossover (manual tag, with a difficulty tier).
    #[serde(rename = "TC")]
    Tc,
    /// Low resolution: some visible box covers fewer than 400 px².
    #[serde(rename = "LR")]
    Lr,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::Ov,
        Attribute::Oc,
        Attribute::Fm,
        Attribute::Sv,
        Attribute::Li,
        Attribute::Tc,
        Attribute::Lr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Attribute::Ov => "OV",
            Attribute::Oc => "OC",
            Attribute::Fm => "FM",
            Attribute::Sv => "SV",
            Attribute::Li => "LI",
            Attribute::Tc => "TC",
            Attribute::Lr => "LR",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Difficulty tier of a thermal-crossover sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcTier {
    Easy,
    Med,
    Hard,
}

impl TcTier {
    pub fn as_str(&self) -> &'static str {
        match self {
            TcTier::Easy => "easy",
            TcTier::Med => "med",
            TcTier::Hard => "hard",
        }
    }
}

/// Fast-motion threshold: adjacent visible centers strictly more than this
/// many pixels apart.
pub const FAST_MOTION_PX: f64 = 60.0;
/// Scale-variation band relative to the first visible frame's area; a
/// sequence gets the attribute when some ratio falls strictly outside it.
pub const SCALE_VARIATION_BAND: (f64, f64) = (0.66, 1.5);
/// Low-resolution threshold: a visible box strictly smaller than this many
/// square pixels.
pub const LOW_RESOLUTION_AREA: f64 = 400.0;

/// Errors from parsing, validation, pairing, or dataset IO.
#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation is not a JSON object")]
    NotAnObject,
    #[error("missing key {0:?} (and no accepted alias present)")]
    MissingKey(&'static str),
    #[error("key {key:?} is not an array")]
    NotAnArray { key: &'static str },
    #[error("length mismatch at frame {frame}: exist has {exist_len} entries, rect list has {rect_len}")]
    LengthMismatch {
        frame: usize,
        exist_len: usize,
        rect_len: usize,
    },
    #[error("frame {frame}: exist flag must be 0 or 1")]
    BadExistFlag { frame: usize },
    #[error("frame {frame}: {reason}")]
    BadRect { frame: usize, reason: String },
    #[error("frame {frame}: visibility flag and box presence disagree")]
    ExistRectMismatch { frame: usize },
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("thermal-crossover tier set without the TC attribute")]
    TierWithoutTc,
    #[error("unknown modality {0:?} (expected \"infrared\" or \"visible\")")]
    UnknownModality(String),
    #[error("pair {pair_id:?}: expected one {expected} sequence, got {got}")]
    PairModalityMismatch {
        pair_id: String,
        expected: Modality,
        got: Modality,
    },
    #[error("duplicate pairing keys on the {modality} side: {keys:?}")]
    DuplicateKeys { modality: Modality, keys: Vec<String> },
    #[error("duplicate pair id {0:?} in split")]
    DuplicatePairId(String),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unknown split {0:?} (expected train, val or test)")]
    UnknownSplit(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AnnotationError + '_ {
    move |source| AnnotationError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One annotated sequence: per-frame states plus sequence-level tags.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceAnnotation {
    sequence_id: String,
    modality: Modality,
    frames: Vec<FrameState>,
    manual_attributes: BTreeSet<Attribute>,
    tc_tier: Option<TcTier>,
}

impl SequenceAnnotation {
    /// Builds a sequence annotation, validating that frames are non-empty
    /// and that a crossover tier only appears together with the TC tag.
    pub fn new(
        sequence_id: impl Into<String>,
        modality: Modality,
        frames: Vec<FrameState>,
        manual_attributes: BTreeSet<Attribute>,
        tc_tier: Option<TcTier>,
    ) -> Result<Self, AnnotationError> {
        if frames.is_empty() {
            return Err(AnnotationError::EmptySequence);
        }
        if tc_tier.is_some() && !manual_attributes.contains(&Attribute::Tc) {
            return Err(AnnotationError::TierWithoutTc);
        }
        Ok(Self {
            sequence_id: sequence_id.into(),
            modality,
            frames,
            manual_attributes,
            tc_tier,
        })
    }

    pub fn sequence_id(&self) -> &str {
        &self.sequence_id
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn frames(&self) -> &[FrameState] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn manual_attributes(&self) -> &BTreeSet<Attribute> {
        &self.manual_attributes
    }

    pub fn tc_tier(&self) -> Option<TcTier> {
        self.tc_tier
    }

    /// Manual tags plus everything re-derivable from the boxes.
    pub fn all_attributes(&self) -> BTreeSet<Attribute> {
        let mut all = self.manual_attributes.clone();
        all.extend(compute_derivable_attributes(self).attributes);
        all
    }

    /// Indices (and boxes) of visible frames in order.
    pub fn visible_frames(&self) -> impl Iterator<Item = (usize, &BoundingBox)> {
        self.frames
            .iter()
            .enumerate()
            .filter_map(|(t, f)| f.rect().map(|r| (t, r)))
    }
}

// --- annotation document parsing / writing -------------------------------

fn parse_exist_flag(v: &serde_json::Value, frame: usize) -> Result<bool, AnnotationError> {
    match v.as_u64() {
        Some(0) => Ok(false),
        Some(1) => Ok(true),
        _ => Err(AnnotationError::BadExistFlag { frame }),
    }
}

fn parse_rect(v: &serde_json::Value, frame: usize) -> Result<Option<BoundingBox>, AnnotationError> {
    let arr = v.as_array().ok_or_else(|| AnnotationError::BadRect {
        frame,
        reason: "box entry is not an array".to_string(),
    })?;
    if arr.is_empty() {
        return Ok(None);
    }
    if arr.len() != 4 {
        return Err(AnnotationError::BadRect {
            frame,
            reason: format!("box has {} coordinates, expected 4", arr.len()),
        });
    }
    let mut c = [0.0f64; 4];
    for (i, v) in arr.iter().enumerate() {
        c[i] = v.as_f64().ok_or_else(|| AnnotationError::BadRect {
            frame,
            reason: format!("coordinate {i} is not a number"),
        })?;
    }
    let rect =
        BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(|e| AnnotationError::BadRect {
            frame,
            reason: e.to_string(),
        })?;
    Ok(Some(rect))
}

/// Parses the per-frame part of an annotation document.
///
/// Accepts both the canonical `gt_rect` key and the historical `get_rect`
/// spelling. Every error names the offending frame index where one exists:
/// mismatched array lengths, flags other than 0/1, boxes with the wrong
/// arity or non-numeric coordinates, inverted corners, and disagreement
/// between the flag and box presence are all rejected.
pub fn parse_annotation(bytes: &[u8]) -> Result<Vec<FrameState>, AnnotationError> {
    let doc: serde_json::Value = serde_json::from_slice(bytes)?;
    let obj = doc.as_object().ok_or(AnnotationError::NotAnObject)?;
    let exist = obj
        .get("exist")
        .ok_or(AnnotationError::MissingKey("exist"))?
        .as_array()
        .ok_or(AnnotationError::NotAnArray { key: "exist" })?;
    let rects = obj
        .get("gt_rect")
        .or_else(|| obj.get("get_rect"))
        .ok_or(AnnotationError::MissingKey("gt_rect"))?
        .as_array()
        .ok_or(AnnotationError::NotAnArray { key: "gt_rect" })?;
    if exist.len() != rects.len() {
        return Err(AnnotationError::LengthMismatch {
            frame: exist.len().min(rects.len()),
            exist_len: exist.len(),
            rect_len: rects.len(),
        });
    }
    let mut frames = Vec::with_capacity(exist.len());
    for (t, (e, r)) in exist.iter().zip(rects).enumerate() {
        let visible = parse_exist_flag(e, t)?;
        let rect = parse_rect(r, t)?;
        if visible != rect.is_some() {
            return Err(AnnotationError::ExistRectMismatch { frame: t });
        }
        frames.push(FrameState::try_new(visible, rect).expect("flag/box agreement checked above"));
    }
    Ok(frames)
}

#[derive(Serialize)]
struct AnnotationDoc {
    exist: Vec<u8>,
    gt_rect: Vec<Vec<f64>>,
}

/// Serializes per-frame states to the canonical annotation document.
///
/// The writer always emits the `gt_rect` spelling, compact JSON, and full
/// `f64` precision, so `write . parse . write` is byte-stable.
pub fn write_annotation(frames: &[FrameState]) -> Vec<u8> {
    let doc = AnnotationDoc {
        exist: frames.iter().map(|f| f.exist() as u8).collect(),
        gt_rect: frames
            .iter()
            .map(|f| match f.rect() {
                Some(r) => vec![r.x1, r.y1, r.x2, r.y2],
                None => Vec::new(),
            })
            .collect(),
    };
    serde_json::to_vec(&doc).expect("annotation document serialization cannot fail")
}

// --- derivable attributes -------------------------------------------------

/// Result of re-deriving attributes from annotation geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivedAttributes {
    pub attributes: BTreeSet<Attribute>,
    /// Set when the sequence has no visible frame, in which case the
    /// motion/scale/resolution rules had nothing to evaluate.
    pub no_visible_frames: bool,
}

/// Re-derives the geometry-based challenge attributes of a sequence.
///
/// * **OV** — some frame has the target out of view.
/// * **FM** — two *adjacent* visible frames have centers more than
///   60 px apart (strictly).
/// * **SV** — some visible box area, relative to the *first visible*
///   frame's area, falls strictly outside `[0.66, 1.5]`.
/// * **LR** — some visible box covers strictly less than 400 px².
///
/// Frames with the target absent simply do not participate in the FM/SV/LR
/// rules (FM only fires on consecutive visible pairs). A sequence with no
/// visible frame at all yields `{OV}` and sets
/// [`DerivedAttributes::no_visible_frames`].
pub fn compute_derivable_attributes(ann: &SequenceAnnotation) -> DerivedAttributes {
    let mut attrs = BTreeSet::new();
    if ann.frames().iter().any(|f| !f.exist()) {
        attrs.insert(Attribute::Ov);
    }
    let visible: Vec<(usize, &BoundingBox)> = ann.visible_frames().collect();
    if visible.is_empty() {
        return DerivedAttributes {
            attributes: attrs,
            no_visible_frames: true,
        };
    }
    // Fast motion: adjacent frame indices, both visible.
    for w in visible.windows(2) {
        let ((t0, b0), (t1, b1)) = (w[0], w[1]);
        if t1 == t0 + 1 && crate::geometry::center_distance(b0, b1) > FAST_MOTION_PX {
            attrs.insert(Attribute::Fm);
            break;
        }
    }
    // Scale variation: area ratio against the first visible frame.
    let ref_area = visible[0].1.area();
    for (_, b) in &visible {
        let area = b.area();
        let out = if ref_area == 0.0 {
            area > 0.0 // any growth from a degenerate reference counts
        } else {
            let ratio = area / ref_area;
            ratio < SCALE_VARIATION_BAND.0 || ratio > SCALE_VARIATION_BAND.1
        };
        if out {
            attrs.insert(Attribute::Sv);
            break;
        }
    }
    // Low resolution: any visible box below the area threshold.
    if visible.iter().any(|(_, b)| b.area() < LOW_RESOLUTION_AREA) {
        attrs.insert(Attribute::Lr);
    }
    DerivedAttributes {
        attributes: attrs,
        no_visible_frames: false,
    }
}

// --- pairs and splits ------------------------------------------------------

/// An infrared/visible recording of the same flight. Frame counts may
/// differ; annotations are kept per modality and never copied across.
#[derive(Clone, Debug, PartialEq)]
pub struct SequencePair {
    pair_id: String,
    infrared: SequenceAnnotation,
    visible: SequenceAnnotation,
}

impl SequencePair {
    pub fn new(
        pair_id: impl Into<String>,
        infrared: SequenceAnnotation,
        visible: SequenceAnnotation,
    ) -> Result<Self, AnnotationError> {
        let pair_id = pair_id.into();
        if infrared.modality() != Modality::Infrared {
            return Err(AnnotationError::PairModalityMismatch {
                pair_id,
                expected: Modality::Infrared,
                got: infrared.modality(),
            });
        }
        if visible.modality() != Modality::Visible {
            return Err(AnnotationError::PairModalityMismatch {
                pair_id,
                expected: Modality::Visible,
                got: visible.modality(),
            });
        }
        Ok(Self {
            pair_id,
            infrared,
            visible,
        })
    }

    pub fn pair_id(&self) -> &str {
        &self.pair_id
    }

    pub fn infrared(&self) -> &SequenceAnnotation {
        &self.infrared
    }

    pub fn visible(&self) -> &SequenceAnnotation {
        &self.visible
    }

    pub fn modality(&self, m: Modality) -> &SequenceAnnotation {
        match m {
            Modality::Infrared => &self.infrared,
            Modality::Visible => &self.visible,
        }
    }
}

/// Dataset split names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = AnnotationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(AnnotationError::UnknownSplit(other.to_string())),
        }
    }
}

/// A named collection of sequence pairs with unique pair ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    name: SplitName,
    pairs: Vec<SequencePair>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, pairs: Vec<SequencePair>) -> Result<Self, AnnotationError> {
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if !seen.insert(p.pair_id().to_string()) {
                return Err(AnnotationError::DuplicatePairId(p.pair_id().to_string()));
            }
        }
        Ok(Self { name, pairs })
    }

    pub fn name(&self) -> SplitName {
        self.name
    }

    pub fn pairs(&self) -> &[SequencePair] {
        &self.pairs
    }

    /// All sequences of one modality, in pair order.
    pub fn sequences(&self, m: Modality) -> impl Iterator<Item = &SequenceAnnotation> {
        self.pairs.iter().map(move |p| p.modality(m))
    }

    /// All sequences of both modalities, infrared first within each pair.
    pub fn all_sequences(&self) -> impl Iterator<Item = &SequenceAnnotation> {
        self.pairs
            .iter()
            .flat_map(|p| [p.infrared(), p.visible()].into_iter())
    }
}

/// Outcome of matching infrared and visible sequences into pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairingOutcome {
    /// Matched pairs, sorted by pair id.
    pub pairs: Vec<SequencePair>,
    /// Infrared keys with no visible counterpart, sorted.
    pub unmatched_infrared: Vec<String>,
    /// Visible keys with no infrared counterpart, sorted.
    pub unmatched_visible: Vec<String>,
}

/// Matches infrared and visible sequences by a caller-supplied pairing key
/// (the key becomes the pair id).
///
/// Unmatched sequences are reported, never silently dropped. Duplicate keys
/// on either side are an error listing the offenders. The output order is
/// deterministic: pairs and unmatched lists are sorted by key.
pub fn pair_modalities<F>(
    infrared: Vec<SequenceAnnotation>,
    visible: Vec<SequenceAnnotation>,
    key: F,
) -> Result<PairingOutcome, AnnotationError>
where
    F: Fn(&SequenceAnnotation) -> String,
{
    fn index_by_key<F: Fn(&SequenceAnnotation) -> String>(
        seqs: Vec<SequenceAnnotation>,
        key: &F,
        modality: Modality,
    ) -> Result<BTreeMap<String, SequenceAnnotation>, AnnotationError> {
        let mut map = BTreeMap::new();
        let mut dups = BTreeSet::new();
        for s in seqs {
            let k = key(&s);
            if map.insert(k.clone(), s).is_some() {
                dups.insert(k);
            }
        }
        if !dups.is_empty() {
            return Err(AnnotationError::DuplicateKeys {
                modality,
                keys: dups.into_iter().collect(),
            });
        }
        Ok(map)
    }

    let mut ir = index_by_key(infrared, &key, Modality::Infrared)?;
    let mut vis = index_by_key(visible, &key, Modality::Visible)?;

    let ir_keys: BTreeSet<String> = ir.keys().cloned().collect();
    let vis_keys: BTreeSet<String> = vis.keys().cloned().collect();

    let mut pairs = Vec::new();
    for k in ir_keys.intersection(&vis_keys) {
        let i = ir.remove(k).expect("key from intersection");
        let v = vis.remove(k).expect("key from intersection");
        pairs.push(SequencePair::new(k.clone(), i, v)?);
    }
    Ok(PairingOutcome {
        pairs,
        unmatched_infrared: ir_keys.difference(&vis_keys).cloned().collect(),
        unmatched_visible: vis_keys.difference(&ir_keys).cloned().collect(),
    })
}

// --- dataset statistics ----------------------------------------------------

/// A 1-D histogram with explicit bin edges (`counts.len() + 1` edges).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram1d {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// A 2-D histogram over (x, y) with row-major counts (`counts[yi][xi]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub counts: Vec<Vec<u64>>,
}

const HIST_BINS: usize = 16;

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let hi = if hi > lo { hi } else { lo + 1.0 };
    (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect()
}

fn bin_index(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    let lo = edges[0];
    let hi = edges[bins];
    if v >= hi {
        return bins - 1;
    }
    let raw = ((v - lo) / (hi - lo) * bins as f64).floor();
    (raw.max(0.0) as usize).min(bins - 1)
}

/// Summary statistics of one dataset split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStatistics {
    pub sequences: usize,
    pub total_frames: usize,
    pub visible_frames: usize,
    /// 2-D histogram of visible box centers.
    pub position: Histogram2d,
    /// Histogram of the scale statistic `sqrt(w * h)` over visible boxes.
    pub scale: Histogram1d,
    /// Mean scale over visible boxes, when any exist.
    pub mean_scale: Option<f64>,
    /// Per-attribute sequence counts (manual plus derived tags).
    pub attribute_counts: BTreeMap<Attribute, usize>,
}

/// Computes position/scale distributions and attribute counts over every
/// sequence (both modalities) of a split.
///
/// Attribute counts are sequence-level indicators — each sequence
/// contributes at most one count per attribute, so every count is bounded
/// by the number of sequences. A split with no visible boxes anywhere
/// yields all-zero histograms and no mean scale.
pub fn dataset_statistics(split: &DatasetSplit) -> SplitStatistics {
    let mut centers = Vec::new();
    let mut scales = Vec::new();
    let mut sequences = 0usize;
    let mut total_frames = 0usize;
    let mut attribute_counts: BTreeMap<Attribute, usize> =
        Attribute::ALL.iter().map(|a| (*a, 0usize)).collect();

    for seq in split.all_sequences() {
        sequences += 1;
        total_frames += seq.len();
        for (_, b) in seq.visible_frames() {
            centers.push(b.center());
            scales.push(b.scale());
        }
        for a in seq.all_attributes() {
            *attribute_counts.entry(a).or_insert(0) += 1;
        }
    }

    let (x_edges, y_edges, s_edges) = if centers.is_empty() {
        (
            edges(0.0, 1.0, HIST_BINS),
            edges(0.0, 1.0, HIST_BINS),
            edges(0.0, 1.0, HIST_BINS),
        )
    } else {
        let max_x = centers.iter().map(|c| c.0).fold(0.0f64, f64::max);
        let max_y = centers.iter().map(|c| c.1).fold(0.0f64, f64::max);
        let max_s = scales.iter().copied().fold(0.0f64, f64::max);
        (
            edges(0.0, max_x, HIST_BINS),
            edges(0.0, max_y, HIST_BINS),
            edges(0.0, max_s, HIST_BINS),
        )
    };

    let mut pos_counts = vec![vec![0u64; HIST_BINS]; HIST_BINS];
    for (cx, cy) in &centers {
        pos_counts[bin_index(&y_edges, *cy)][bin_index(&x_edges, *cx)] += 1;
    }
    let mut scale_counts = vec![0u64; HIST_BINS];
    for s in &scales {
        scale_counts[bin_index(&s_edges, *s)] += 1;
    }

    let mean_scale = if scales.is_empty() {
        None
    } else {
        Some(scales.iter().sum::<f64>() / scales.len() as f64)
    };

    SplitStatistics {
        sequences,
        total_frames,
        visible_frames: centers.len(),
        position: Histogram2d {
            x_edges,
            y_edges,
            counts: pos_counts,
        },
        scale: Histogram1d {
            edges: s_edges,
            counts: scale_counts,
        },
        mean_scale,
        attribute_counts,
    }
}

// --- on-disk layout ---------------------------------------------------------

/// Sequence-level metadata sidecar (`meta.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub pair_id: String,
    pub modality: Modality,
    /// Manually tagged attributes (the derivable ones may be listed too;
    /// readers always union with the re-derived set).
    pub attributes: BTreeSet<Attribute>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tc_tier: Option<TcTier>,
}

/// File name of the per-sequence annotation document.
pub const ANNOTATION_FILE: &str = "annotation.json";
/// File name of the per-sequence metadata sidecar.
pub const META_FILE: &str = "meta.json";

/// Canonical sequence id for a pair/modality combination: `<pair>_<modality>`.
pub fn sequence_id(pair_id: &str, modality: Modality) -> String {
    format!("{pair_id}_{modality}")
}

/// Directory of one sequence inside a dataset tree.
pub fn sequence_dir(root: &Path, split: SplitName, pair_id: &str, modality: Modality) -> PathBuf {
    root.join(split.as_str())
        .join(pair_id)
        .join(modality.dir_name())
}

/// Path of a split manifest (`<root>/<split>.txt`, one pair id per line).
pub fn manifest_path(root: &Path, split: SplitName) -> PathBuf {
    root.join(format!("{split}.txt"))
}

/// Writes `annotation.json` + `meta.json` for one sequence directory.
pub fn write_sequence_dir(dir: &Path, ann: &SequenceAnnotation) -> Result<(), AnnotationError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let ann_path = dir.join(ANNOTATION_FILE);
    std::fs::write(&ann_path, write_annotation(ann.frames())).map_err(io_err(&ann_path))?;
    let pair_id = dir
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let meta = SequenceMeta {
        pair_id,
        modality: ann.modality(),
        attributes: ann.manual_attributes().clone(),
        tc_tier: ann.tc_tier(),
    };
    let meta_path = dir.join(META_FILE);
    let bytes = serde_json::to_vec_pretty(&meta)?;
    std::fs::write(&meta_path, bytes).map_err(io_err(&meta_path))?;
    Ok(())
}

/// Reads one sequence directory back into an annotation.
pub fn read_sequence_dir(dir: &Path) -> Result<SequenceAnnotation, AnnotationError> {
    let ann_path = dir.join(ANNOTATION_FILE);
    let frames = parse_annotation(&std::fs::read(&ann_path).map_err(io_err(&ann_path))?)?;
    let meta_path = dir.join(META_FILE);
    let meta: SequenceMeta =
        serde_json::from_slice(&std::fs::read(&meta_path).map_err(io_err(&meta_path))?)?;
    SequenceAnnotation::new(
        sequence_id(&meta.pair_id, meta.modality),
        meta.modality,
        frames,
        meta.attributes,
        meta.tc_tier,
    )
}

/// Loads a split from a dataset tree via its manifest.
pub fn load_split(root: &Path, split: SplitName) -> Result<DatasetSplit, AnnotationError> {
    let manifest = manifest_path(root, split);
    let listing = std::fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
    let mut pairs = Vec::new();
    for pair_id in listing.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let ir = read_sequence_dir(&sequence_dir(root, split, pair_id, Modality::Infrared))?;
        let vis = read_sequence_dir(&sequence_dir(root, split, pair_id, Modality::Visible))?;
        pairs.push(SequencePair::new(pair_id, ir, vis)?);
    }
    DatasetSplit::new(split, pairs)
}
