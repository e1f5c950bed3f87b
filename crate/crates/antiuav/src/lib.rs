//! Desk-scale toolkit for multi-modal (infrared + visible) UAV tracking
//! experiments.
//!
//! The crate covers the full loop of a small tracking study:
//!
//! * [`geometry`] — axis-aligned box arithmetic (IoU, center distance, scale).
//! * [`metrics`] — the state-accuracy measure for trackers that must also
//!   predict target absence, plus OTB-style precision/success curves.
//! * [`annotations`] — the per-sequence JSON annotation format
//!   (`exist` flags + `gt_rect` corner boxes), challenge-attribute rules,
//!   modality pairing, and dataset statistics.
//! * [`image`] — single-channel PGM / three-channel PPM raster I/O used by
//!   the generator and the tracker's data loading.
//! * [`synth`] — a deterministic synthetic benchmark generator that renders
//!   paired infrared/visible sequences with planted challenge attributes.
//! * [`tape`] — a minimal reverse-mode autodiff engine on dense `f64`
//!   arrays, with a finite-difference gradient checker.
//! * [`tracker`] — a query-guided two-stage detector-tracker: shared
//!   backbone, correlation-based class-level modulation feeding an RPN, and
//!   Hadamard instance-level modulation feeding a per-proposal head.
//! * [`train`] — dual-flow training: cross-sequence modulation pairs,
//!   the combined RPN/proposal losses, SGD with momentum, and a
//!   deterministic `fit` loop.
//! * [`eval`] — tracker execution over a dataset split, protocol-aware
//!   reports with per-attribute breakdowns, and reference trackers
//!   (oracle / always-absent / random / noisy) for harness validation.
//! * [`cli`] — the `antiuav` command line (`synth` / `train` / `track` /
//!   `eval` / `stats` / `plot`) with TOML config files and fixed exit codes.
//!
//! The primary interface is the `examples/` directory (one runnable example
//! per capability); the `antiuav` binary exposes the same operations as
//! `synth` / `train` / `track` / `eval` / `stats` / `plot` subcommands.
//!
//! Everything is seeded and single-threaded: reruns with the same inputs
//! produce byte-identical artifacts.

pub mod annotations;
pub mod cli;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod synth;
pub mod tape;
pub mod tracker;
pub mod train;

pub use annotations::{
    compute_derivable_attributes, pair_modalities, parse_annotation, write_annotation, Attribute,
    DatasetSplit, Modality, SequenceAnnotation, SequencePair, TcTier,
};
pub use geometry::{center_distance, iou, scale, BoundingBox};
pub use metrics::{
    mean_state_accuracy, precision_curve, state_accuracy, success_curve, EvalCurve, FrameState,
    PredictionState,
};
