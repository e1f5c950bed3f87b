//! Evaluation harness: run a tracker (the built-in one, a reference stub,
//! or external per-sequence results files) over a dataset split and score
//! it under the three comparison protocols, with attribute-sliced reports.
//!
//! Protocols 1 and 2 differ only in what training data was *allowed*, which
//! an evaluator cannot verify — the report records the declared protocol
//! and provenance string. Protocol 3 scores the infrared and visible
//! results of each pair independently and also reports their mean.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{
    sequence_dir, AnnotationError, Attribute, DatasetSplit, Modality, SequenceAnnotation,
    SplitName, TcTier,
};
use crate::geometry::BoundingBox;
use crate::image::{frame_file_name, ImageError, RasterImage};
use crate::metrics::{
    mean_state_accuracy, precision_curve, state_accuracy, success_curve, EvalCurve, MetricsError,
    PredictionState, PRECISION_HEADLINE_PX,
};
use crate::synth::derive_seed;
use crate::tape::Arr;
use crate::tracker::infer::track_sequence;
use crate::tracker::{Model, TrackerError};

/// Errors from result ingestion, matching, or scoring.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no results for annotated sequences: {}", ids.join(", "))]
    MissingResults { ids: Vec<String> },
    #[error("results for unknown sequences: {}", ids.join(", "))]
    UnknownSequences { ids: Vec<String> },
    #[error("sequence '{sequence_id}': result has {result} frames, annotation has {annotation}")]
    LengthMismatch {
        sequence_id: String,
        result: usize,
        annotation: usize,
    },
    #[error("duplicate result for sequence '{0}'")]
    DuplicateResult(String),
    #[error("nothing to evaluate: no annotations given")]
    NothingToEvaluate,
    #[error("unknown protocol '{0}' (expected 1, 2, or 3)")]
    UnknownProtocol(String),
    #[error("results file {path}: {reason}")]
    BadResultsFile { path: PathBuf, reason: String },
    #[error("sequence id '{0}' does not end in a modality suffix (_infrared or _visible)")]
    UnknownModalitySuffix(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One tracker's output on one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub sequence_id: String,
    pub frames: Vec<PredictionState>,
    pub tracker_name: String,
    pub modality: Modality,
}

// --- results files ----------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ResultsDoc {
    exist: Vec<u8>,
    rect: Vec<Vec<f64>>,
    score: Vec<f64>,
}

/// Serializes per-frame predictions to the external results format:
/// `{"exist": [0|1...], "rect": [[x1,y1,x2,y2]|[]...], "score": [f64...]}`.
pub fn write_results_file(frames: &[PredictionState]) -> Vec<u8> {
    let doc = ResultsDoc {
        exist: frames.iter().map(|f| f.is_present() as u8).collect(),
        rect: frames
            .iter()
            .map(|f| match f.rect() {
                Some(r) => vec![r.x1, r.y1, r.x2, r.y2],
                None => Vec::new(),
            })
            .collect(),
        score: frames.iter().map(|f| f.score()).collect(),
    };
    serde_json::to_vec(&doc).expect("results document serialization cannot fail")
}

/// Parses an external results document, validating array lengths, flag/box
/// agreement, and score ranges.
pub fn parse_results_file(bytes: &[u8], path: &Path) -> Result<Vec<PredictionState>, EvalError> {
    let bad = |reason: String| EvalError::BadResultsFile {
        path: path.to_path_buf(),
        reason,
    };
    let doc: ResultsDoc = serde_json::from_slice(bytes)
        .map_err(|e| bad(format!("not a results document: {e}")))?;
    if doc.exist.len() != doc.rect.len() || doc.exist.len() != doc.score.len() {
        return Err(bad(format!(
            "array lengths disagree: exist {}, rect {}, score {}",
            doc.exist.len(),
            doc.rect.len(),
            doc.score.len()
        )));
    }
    let mut frames = Vec::with_capacity(doc.exist.len());
    for (t, ((e, r), s)) in doc.exist.iter().zip(&doc.rect).zip(&doc.score).enumerate() {
        let present = match e {
            0 => false,
            1 => true,
            other => return Err(bad(format!("frame {t}: exist flag {other} is not 0/1"))),
        };
        let rect = match r.len() {
            0 => None,
            4 => Some(
                BoundingBox::new(r[0], r[1], r[2], r[3])
                    .map_err(|e| bad(format!("frame {t}: {e}")))?,
            ),
            n => return Err(bad(format!("frame {t}: box has {n} coordinates"))),
        };
        if present != rect.is_some() {
            return Err(bad(format!(
                "frame {t}: exist flag and box presence disagree"
            )));
        }
        frames.push(
            PredictionState::try_new(present, rect, *s)
                .map_err(|e| bad(format!("frame {t}: {e}")))?,
        );
    }
    Ok(frames)
}

/// Writes one tracker's results as `<root>/<tracker_name>/<sequence_id>.json`.
pub fn write_results(root: &Path, results: &[TrackResult]) -> Result<(), EvalError> {
    for r in results {
        let dir = root.join(&r.tracker_name);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{}.json", r.sequence_id));
        std::fs::write(&path, write_results_file(&r.frames)).map_err(io_err(&path))?;
    }
    Ok(())
}

fn modality_of_sequence_id(id: &str) -> Result<Modality, EvalError> {
    if id.ends_with("_infrared") {
        Ok(Modality::Infrared)
    } else if id.ends_with("_visible") {
        Ok(Modality::Visible)
    } else {
        Err(EvalError::UnknownModalitySuffix(id.to_string()))
    }
}

/// Reads one tracker's results directory. The tracker's name is the
/// directory's basename; each `<sequence_id>.json` becomes one result, with
/// the modality inferred from the id's `_infrared` / `_visible` suffix.
pub fn read_results(dir: &Path) -> Result<Vec<TrackResult>, EvalError> {
    let tracker_name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| EvalError::BadResultsFile {
            path: dir.to_path_buf(),
            reason: "results directory has no basename to use as tracker name".to_string(),
        })?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();
    let mut results = Vec::with_capacity(names.len());
    for path in names {
        let sequence_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        results.push(TrackResult {
            modality: modality_of_sequence_id(&sequence_id)?,
            frames: parse_results_file(&bytes, &path)?,
            sequence_id,
            tracker_name: tracker_name.clone(),
        });
    }
    Ok(results)
}

// --- protocols and report structure ------------------------------------------

/// Comparison protocol. 1 and 2 constrain the allowed training data (which
/// is recorded as provenance, not enforced); 3 additionally scores each
/// modality of a pair separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "1")]
    I,
    #[serde(rename = "2")]
    II,
    #[serde(rename = "3")]
    III,
}

impl Protocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            Protocol::I => "1",
            Protocol::II => "2",
            Protocol::III => "3",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(Protocol::I),
            "2" => Ok(Protocol::II),
            "3" => Ok(Protocol::III),
            other => Err(EvalError::UnknownProtocol(other.to_string())),
        }
    }
}

/// Report columns, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttributeColumn {
    #[serde(rename = "OV")]
    Ov,
    #[serde(rename = "OC")]
    Oc,
    #[serde(rename = "FM")]
    Fm,
    #[serde(rename = "SV")]
    Sv,
    #[serde(rename = "LI")]
    Li,
    #[serde(rename = "TC_easy")]
    TcEasy,
    #[serde(rename = "TC_med")]
    TcMed,
    #[serde(rename = "TC_hard")]
    TcHard,
    #[serde(rename = "TC_all")]
    TcAll,
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "All")]
    All,
}

impl AttributeColumn {
    pub const ALL: [AttributeColumn; 11] = [
        AttributeColumn::Ov,
        AttributeColumn::Oc,
        AttributeColumn::Fm,
        AttributeColumn::Sv,
        AttributeColumn::Li,
        AttributeColumn::TcEasy,
        AttributeColumn::TcMed,
        AttributeColumn::TcHard,
        AttributeColumn::TcAll,
        AttributeColumn::Lr,
        AttributeColumn::All,
    ];

    pub fn header(&self) -> &'static str {
        match self {
            AttributeColumn::Ov => "OV",
            AttributeColumn::Oc => "OC",
            AttributeColumn::Fm => "FM",
            AttributeColumn::Sv => "SV",
            AttributeColumn::Li => "LI",
            AttributeColumn::TcEasy => "TC_easy",
            AttributeColumn::TcMed => "TC_med",
            AttributeColumn::TcHard => "TC_hard",
            AttributeColumn::TcAll => "TC_all",
            AttributeColumn::Lr => "LR",
            AttributeColumn::All => "All",
        }
    }

    /// Whether a sequence belongs to this column's subset. `TC_all` is
    /// tied to the tier field, so it aggregates exactly the sequences the
    /// three tier columns count.
    pub fn matches(&self, ann: &SequenceAnnotation) -> bool {
        let has = |a: Attribute| ann.all_attributes().contains(&a);
        match self {
            AttributeColumn::Ov => has(Attribute::Ov),
            AttributeColumn::Oc => has(Attribute::Oc),
            AttributeColumn::Fm => has(Attribute::Fm),
            AttributeColumn::Sv => has(Attribute::Sv),
            AttributeColumn::Li => has(Attribute::Li),
            AttributeColumn::TcEasy => ann.tc_tier() == Some(TcTier::Easy),
            AttributeColumn::TcMed => ann.tc_tier() == Some(TcTier::Med),
            AttributeColumn::TcHard => ann.tc_tier() == Some(TcTier::Hard),
            AttributeColumn::TcAll => ann.tc_tier().is_some(),
            AttributeColumn::Lr => has(Attribute::Lr),
            AttributeColumn::All => true,
        }
    }
}

/// One sequence's score row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub sequence_id: String,
    pub modality: Modality,
    pub sa: f64,
}

/// Protocol-3 per-modality breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityBreakdown {
    pub infrared_msa: Option<f64>,
    pub visible_msa: Option<f64>,
    /// Mean of the two modality scores when both exist.
    pub mean_msa: Option<f64>,
}

/// One tracker's full evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerEval {
    pub tracker_name: String,
    /// Per-sequence state accuracy, in sequence-id order.
    pub per_sequence: Vec<SequenceScore>,
    /// Mean state accuracy over every sequence (the "All" column).
    pub msa: f64,
    /// Value-wise mean precision curve over sequences with measurable
    /// frames; degenerate when no sequence had any.
    pub precision: EvalCurve,
    /// Value-wise mean success curve, same convention.
    pub success: EvalCurve,
    /// Mean precision at the headline 20 px threshold.
    pub precision_at_20: f64,
    /// Area under the mean success curve.
    pub success_auc: f64,
    /// Attribute-sliced mean state accuracy; `None` marks an empty subset.
    pub attributes: BTreeMap<AttributeColumn, Option<f64>>,
    /// Present under Protocol 3 only.
    pub modalities: Option<ModalityBreakdown>,
}

/// A full evaluation run: every tracker scored on the same annotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    /// Declared training-data provenance (recorded, not enforced).
    pub provenance: String,
    /// One entry per tracker, sorted by the All column ascending.
    pub trackers: Vec<TrackerEval>,
}

fn mean_curve(curves: &[EvalCurve]) -> EvalCurve {
    let live: Vec<&EvalCurve> = curves.iter().filter(|c| !c.degenerate).collect();
    let thresholds = curves[0].thresholds.clone();
    if live.is_empty() {
        let n = thresholds.len();
        return EvalCurve {
            thresholds,
            values: vec![0.0; n],
            auc: 0.0,
            degenerate: true,
        };
    }
    let values: Vec<f64> = (0..thresholds.len())
        .map(|i| live.iter().map(|c| c.values[i]).sum::<f64>() / live.len() as f64)
        .collect();
    let auc = values.iter().sum::<f64>() / values.len() as f64;
    EvalCurve {
        thresholds,
        values,
        auc,
        degenerate: false,
    }
}

/// Mean state accuracy of the sequences matching `column`; `None` when the
/// subset is empty (rendered "—", never a fabricated 0).
pub fn attribute_slice(
    scores: &[SequenceScore],
    annotations: &BTreeMap<&str, &SequenceAnnotation>,
    column: AttributeColumn,
) -> Option<f64> {
    let subset: Vec<f64> = scores
        .iter()
        .filter(|s| column.matches(annotations[s.sequence_id.as_str()]))
        .map(|s| s.sa)
        .collect();
    if subset.is_empty() {
        None
    } else {
        Some(mean_state_accuracy(&subset).expect("non-empty subset"))
    }
}

fn evaluate_tracker(
    tracker_name: &str,
    results: &BTreeMap<&str, &TrackResult>,
    annotations: &BTreeMap<&str, &SequenceAnnotation>,
    protocol: Protocol,
) -> Result<TrackerEval, EvalError> {
    let mut per_sequence = Vec::with_capacity(annotations.len());
    let mut pcurves = Vec::with_capacity(annotations.len());
    let mut scurves = Vec::with_capacity(annotations.len());
    for (&id, &ann) in annotations {
        let result = results[id];
        per_sequence.push(SequenceScore {
            sequence_id: id.to_string(),
            modality: ann.modality(),
            sa: state_accuracy(&result.frames, ann.frames())?,
        });
        pcurves.push(precision_curve(&result.frames, ann.frames())?);
        scurves.push(success_curve(&result.frames, ann.frames())?);
    }
    let msa = mean_state_accuracy(
        &per_sequence.iter().map(|s| s.sa).collect::<Vec<f64>>(),
    )?;
    let precision = mean_curve(&pcurves);
    let success = mean_curve(&scurves);
    let attributes = AttributeColumn::ALL
        .into_iter()
        .map(|col| (col, attribute_slice(&per_sequence, annotations, col)))
        .collect();

    let modalities = if protocol == Protocol::III {
        let slice = |m: Modality| -> Option<f64> {
            let subset: Vec<f64> = per_sequence
                .iter()
                .filter(|s| s.modality == m)
                .map(|s| s.sa)
                .collect();
            if subset.is_empty() {
                None
            } else {
                Some(mean_state_accuracy(&subset).expect("non-empty subset"))
            }
        };
        let infrared_msa = slice(Modality::Infrared);
        let visible_msa = slice(Modality::Visible);
        let mean_msa = match (infrared_msa, visible_msa) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        };
        Some(ModalityBreakdown {
            infrared_msa,
            visible_msa,
            mean_msa,
        })
    } else {
        None
    };

    Ok(TrackerEval {
        tracker_name: tracker_name.to_string(),
        precision_at_20: precision
            .value_at(PRECISION_HEADLINE_PX)
            .expect("20 px is a sweep point"),
        success_auc: success.auc,
        per_sequence,
        msa,
        precision,
        success,
        attributes,
        modalities,
    })
}

/// Scores every tracker found in `results` against `annotations`.
///
/// Every annotated sequence must have a result from every tracker (matched
/// by sequence id, with equal frame counts) and no tracker may provide
/// results for unknown sequences. The output is a pure function of the
/// inputs; trackers are ordered by overall mean state accuracy ascending.
pub fn evaluate(
    results: &[TrackResult],
    annotations: &[SequenceAnnotation],
    protocol: Protocol,
    provenance: &str,
) -> Result<EvalReport, EvalError> {
    if annotations.is_empty() {
        return Err(EvalError::NothingToEvaluate);
    }
    let ann_by_id: BTreeMap<&str, &SequenceAnnotation> = annotations
        .iter()
        .map(|a| (a.sequence_id(), a))
        .collect();

    let mut by_tracker: BTreeMap<&str, BTreeMap<&str, &TrackResult>> = BTreeMap::new();
    for r in results {
        let slot = by_tracker.entry(r.tracker_name.as_str()).or_default();
        if slot.insert(r.sequence_id.as_str(), r).is_some() {
            return Err(EvalError::DuplicateResult(r.sequence_id.clone()));
        }
    }

    let mut trackers = Vec::with_capacity(by_tracker.len());
    for (name, results) in &by_tracker {
        let unknown: Vec<String> = results
            .keys()
            .filter(|id| !ann_by_id.contains_key(**id))
            .map(|id| id.to_string())
            .collect();
        if !unknown.is_empty() {
            return Err(EvalError::UnknownSequences { ids: unknown });
        }
        let missing: Vec<String> = ann_by_id
            .keys()
            .filter(|id| !results.contains_key(**id))
            .map(|id| id.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(EvalError::MissingResults { ids: missing });
        }
        for (&id, &r) in results {
            let expected = ann_by_id[id].len();
            if r.frames.len() != expected {
                return Err(EvalError::LengthMismatch {
                    sequence_id: id.to_string(),
                    result: r.frames.len(),
                    annotation: expected,
                });
            }
        }
        trackers.push(evaluate_tracker(name, results, &ann_by_id, protocol)?);
    }
    trackers.sort_by(|a, b| {
        a.msa
            .total_cmp(&b.msa)
            .then_with(|| a.tracker_name.cmp(&b.tracker_name))
    });
    Ok(EvalReport {
        protocol,
        provenance: provenance.to_string(),
        trackers,
    })
}

// --- rendering ---------------------------------------------------------------

/// Marker rendered for an empty attribute subset.
pub const EMPTY_CELL: &str = "—";

fn cell(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", v * 100.0),
        None => EMPTY_CELL.to_string(),
    }
}

/// Renders the attribute table (and, under Protocol 3, the per-modality
/// table) as Markdown. Byte-deterministic.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# Evaluation report (Protocol {})\n\nTraining-data provenance: {}\n\n",
        report.protocol, report.provenance
    ));
    out.push_str("Attribute-sliced mean state accuracy (%):\n\n");
    out.push_str("| Tracker |");
    for col in AttributeColumn::ALL {
        out.push_str(&format!(" {} |", col.header()));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in AttributeColumn::ALL {
        out.push_str("---|");
    }
    out.push('\n');
    for t in &report.trackers {
        out.push_str(&format!("| {} |", t.tracker_name));
        for col in AttributeColumn::ALL {
            out.push_str(&format!(" {} |", cell(t.attributes[&col])));
        }
        out.push('\n');
    }
    out.push_str("\nHeadline scores (%):\n\n");
    out.push_str("| Tracker | mSA | Precision@20px | Success AUC |\n|---|---|---|---|\n");
    for t in &report.trackers {
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            t.tracker_name,
            cell(Some(t.msa)),
            cell(Some(t.precision_at_20)),
            cell(Some(t.success_auc)),
        ));
    }
    if report.protocol == Protocol::III {
        out.push_str("\nPer-modality mean state accuracy (%):\n\n");
        out.push_str("| Tracker | IR | RGB | Mean |\n|---|---|---|---|\n");
        for t in &report.trackers {
            let m = t.modalities.as_ref().expect("protocol 3 has breakdowns");
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                t.tracker_name,
                cell(m.infrared_msa),
                cell(m.visible_msa),
                cell(m.mean_msa),
            ));
        }
    }
    out
}

/// Renders the attribute table as CSV with the same 2-decimal percentage
/// cells as the Markdown table. Byte-deterministic.
pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from("tracker");
    for col in AttributeColumn::ALL {
        out.push(',');
        out.push_str(col.header());
    }
    if report.protocol == Protocol::III {
        out.push_str(",IR,RGB,Mean");
    }
    out.push('\n');
    for t in &report.trackers {
        out.push_str(&t.tracker_name);
        for col in AttributeColumn::ALL {
            out.push(',');
            out.push_str(&cell(t.attributes[&col]));
        }
        if report.protocol == Protocol::III {
            let m = t.modalities.as_ref().expect("protocol 3 has breakdowns");
            for v in [m.infrared_msa, m.visible_msa, m.mean_msa] {
                out.push(',');
                out.push_str(&cell(v));
            }
        }
        out.push('\n');
    }
    out
}

/// Renders a curve as plot data: one `threshold,value` line per sweep
/// point, full precision.
pub fn render_curve_data(curve: &EvalCurve) -> String {
    let mut out = String::new();
    for (t, v) in curve.thresholds.iter().zip(&curve.values) {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

// --- running trackers over a dataset ------------------------------------------

/// One sequence's image frames loaded from a dataset tree, with its
/// annotation.
pub struct LoadedSequence {
    pub annotation: SequenceAnnotation,
    pub frames: Vec<Arr>,
}

/// Loads the frames of one sequence as normalized CHW tensors.
pub fn load_sequence(
    root: &Path,
    split: SplitName,
    pair_id: &str,
    modality: Modality,
    annotation: &SequenceAnnotation,
) -> Result<Vec<Arr>, EvalError> {
    let dir = sequence_dir(root, split, pair_id, modality);
    let mut frames = Vec::with_capacity(annotation.len());
    for t in 0..annotation.len() {
        let path = dir.join(frame_file_name(t, modality.channels()));
        frames.push(RasterImage::load(&path)?.to_chw_f64());
    }
    Ok(frames)
}

/// A sequence skipped by [`run_tracker`], with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSequence {
    pub sequence_id: String,
    pub reason: String,
}

/// Runs the model over every sequence of one modality in a split, standard
/// one-pass protocol: the first visible frame initializes the query with
/// its ground-truth box, every later frame is tracked, no re-initialization.
///
/// Unreadable sequences are skipped and reported rather than aborting the
/// run.
pub fn run_tracker(
    model: &Model,
    root: &Path,
    split: &DatasetSplit,
    modality: Modality,
    tracker_name: &str,
) -> Result<(Vec<TrackResult>, Vec<SkippedSequence>), EvalError> {
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for pair in split.pairs() {
        let ann = pair.modality(modality);
        let run = load_sequence(root, split.name(), pair.pair_id(), modality, ann)
            .and_then(|frames| Ok(track_sequence(model, &frames, ann.frames())?));
        match run {
            Ok(frames) => results.push(TrackResult {
                sequence_id: ann.sequence_id().to_string(),
                frames,
                tracker_name: tracker_name.to_string(),
                modality,
            }),
            Err(e) => skipped.push(SkippedSequence {
                sequence_id: ann.sequence_id().to_string(),
                reason: e.to_string(),
            }),
        }
    }
    Ok((results, skipped))
}

// --- reference trackers --------------------------------------------------------

/// Annotation-driven reference trackers for validating the harness: they
/// need no image data and have known score profiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StubTracker {
    /// Emits the ground truth: SA = 1 on every sequence.
    Oracle,
    /// Declares the target absent everywhere: SA = fraction of absent
    /// frames.
    AlwaysAbsent,
    /// Uniform random boxes, always present: near-zero SA.
    Random { seed: u64 },
    /// Ground truth with its position jittered by up to `magnitude_px`
    /// (and absences reported honestly): mid-range SA.
    Noisy { seed: u64, magnitude_px: f64 },
}

impl StubTracker {
    pub fn name(&self) -> &'static str {
        match self {
            StubTracker::Oracle => "oracle",
            StubTracker::AlwaysAbsent => "always-absent",
            StubTracker::Random { .. } => "random",
            StubTracker::Noisy { .. } => "noisy",
        }
    }
}

/// Runs a reference tracker over annotations alone (no images needed).
/// Randomized stubs derive one substream per sequence from the stub seed
/// and the sequence's index in the given order, so output depends only on
/// (seed, annotation list).
pub fn stub_results(stub: StubTracker, annotations: &[SequenceAnnotation]) -> Vec<TrackResult> {
    annotations
        .iter()
        .enumerate()
        .map(|(i, ann)| {
            let frames = match stub {
                StubTracker::Oracle => ann
                    .frames()
                    .iter()
                    .map(|f| match f.rect() {
                        Some(r) => PredictionState::present(*r, 1.0),
                        None => PredictionState::absent(0.0),
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .expect("oracle scores are probabilities"),
                StubTracker::AlwaysAbsent => ann
                    .frames()
                    .iter()
                    .map(|_| PredictionState::absent(0.0))
                    .collect::<Result<Vec<_>, _>>()
                    .expect("absent scores are probabilities"),
                StubTracker::Random { seed } => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                    ann.frames()
                        .iter()
                        .map(|_| {
                            let x1 = rng.gen_range(0.0..200.0);
                            let y1 = rng.gen_range(0.0..200.0);
                            let w = rng.gen_range(4.0..24.0);
                            let h = rng.gen_range(4.0..24.0);
                            let rect = BoundingBox::new(x1, y1, x1 + w, y1 + h)
                                .expect("randomly sized box is ordered");
                            let score = rng.gen_range(0.0..1.0);
                            PredictionState::present(rect, score)
                        })
                        .collect::<Result<Vec<_>, _>>()
                        .expect("random scores are probabilities")
                }
                StubTracker::Noisy { seed, magnitude_px } => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                    ann.frames()
                        .iter()
                        .map(|f| match f.rect() {
                            Some(r) => {
                                let dx = rng.gen_range(-magnitude_px..=magnitude_px);
                                let dy = rng.gen_range(-magnitude_px..=magnitude_px);
                                let rect = BoundingBox::new(
                                    r.x1 + dx,
                                    r.y1 + dy,
                                    r.x2 + dx,
                                    r.y2 + dy,
                                )
                                .expect("translation preserves ordering");
                                PredictionState::present(rect, 0.9)
                            }
                            None => PredictionState::absent(0.1),
                        })
                        .collect::<Result<Vec<_>, _>>()
                        .expect("noisy scores are probabilities")
                }
            };
            TrackResult {
                sequence_id: ann.sequence_id().to_string(),
                frames,
                tracker_name: stub.name().to_string(),
                modality: ann.modality(),
            }
        })
        .collect()
}
