//! Command-line interface: `synth`, `train`, `track`, `eval`, `stats`, and
//! `plot` subcommands over the library.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad configuration,
//! malformed or mismatched inputs), 2 runtime failure (I/O or compute
//! failures after validation). Every value can come from three places with
//! fixed precedence: command line > `ANTIUAV_DATA` environment (dataset
//! root only) > `--config` TOML file > built-in default. All randomness
//! flows from `--seed` (default 42); the resolved seed is printed by every
//! command that uses one, and reruns with identical flags produce
//! byte-identical outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::annotations::{
    dataset_statistics, load_split, manifest_path, AnnotationError, DatasetSplit, Modality,
    SplitName,
};
use crate::eval::{
    evaluate, read_results, render_csv, render_curve_data, render_markdown, run_tracker,
    stub_results, write_results, EvalError, EvalReport, Protocol, StubTracker, TrackResult,
};
use crate::synth::{make_benchmark, Profile, SynthError};
use crate::tracker::{Model, ModelConfig, TrackerError};
use crate::train::{fit, Strategy, TrainConfig, TrainError, TrainSequence};

/// Recorded default seed, used when neither flag nor config supplies one.
pub const DEFAULT_SEED: u64 = 42;

const EXIT_OK: i32 = 0;
const EXIT_VALIDATION: i32 = 1;
const EXIT_RUNTIME: i32 = 2;

#[derive(Parser)]
#[command(
    name = "antiuav",
    version,
    about = "Desk-scale multi-modal UAV tracking toolkit",
    long_about = "Generate synthetic benchmarks, train the toy tracker, run trackers \
                  over datasets, and render attribute-sliced evaluation reports."
)]
struct Cli {
    /// TOML config file; each subcommand reads its own section ([synth],
    /// [train], ...) and command-line flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic synthetic benchmark tree.
    Synth(SynthArgs),
    /// Train the toy tracker on a benchmark's train split.
    Train(TrainArgs),
    /// Run a tracker (trained model or reference stub) over a split.
    Track(TrackArgs),
    /// Score results directories against a split's annotations.
    Eval(EvalArgs),
    /// Print dataset statistics for a split.
    Stats(StatsArgs),
    /// Write precision/success curve data files for plotting.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for the benchmark tree (must not exist, unless it
    /// holds a previously generated benchmark, which is then replaced).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of training pairs.
    #[arg(long, value_name = "N")]
    train: Option<usize>,
    /// Number of validation pairs.
    #[arg(long, value_name = "N")]
    val: Option<usize>,
    /// Number of test pairs.
    #[arg(long, value_name = "N")]
    test: Option<usize>,
    /// Master seed for the whole tree [default: 42].
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Scene preset: easy, fm, tc, ov, or mixed [default: mixed].
    #[arg(long, value_name = "NAME")]
    profile: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Benchmark root (also read from ANTIUAV_DATA).
    #[arg(long, env = "ANTIUAV_DATA", value_name = "DIR")]
    data: Option<PathBuf>,
    /// Training strategy: normal, dfsc, dfsc-all, dfsc-cls, or dfsc-reg
    /// [default: dfsc].
    #[arg(long, value_name = "NAME")]
    strategy: Option<String>,
    /// Cross-pair loss weight [default: 0.25].
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    /// Regression weight inside each detection loss [default: 1.0].
    #[arg(long, value_name = "B")]
    beta: Option<f64>,
    /// Number of optimizer steps [default: 200].
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    /// Base learning rate, decayed 10x at 60% and 85% of the steps
    /// [default: 0.01].
    #[arg(long, value_name = "LR")]
    lr: Option<f64>,
    /// Sequences per batch [default: 2].
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,
    /// Proposals fed to the instance stage [default: 64].
    #[arg(long, value_name = "N")]
    n_pnum: Option<usize>,
    /// Record validation accuracy every N steps (0 = calibration only)
    /// [default: 0].
    #[arg(long, value_name = "N")]
    val_every: Option<usize>,
    /// Modality to train on: infrared or visible [default: infrared].
    #[arg(long, value_name = "NAME")]
    modality: Option<String>,
    /// Seed for init, batch order, and anchor sampling [default: 42].
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Checkpoint output path.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Step-log output path (JSON lines) [default: <out>.log.jsonl].
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrackArgs {
    /// Benchmark root (also read from ANTIUAV_DATA).
    #[arg(long, env = "ANTIUAV_DATA", value_name = "DIR")]
    data: Option<PathBuf>,
    /// Split to track: train, val, or test [default: test].
    #[arg(long, value_name = "NAME")]
    split: Option<String>,
    /// Modality to track: infrared, visible, or both [default: infrared].
    #[arg(long, value_name = "NAME")]
    modality: Option<String>,
    /// Checkpoint of a trained model (mutually exclusive with --stub).
    #[arg(long, value_name = "FILE", conflicts_with = "stub")]
    ckpt: Option<PathBuf>,
    /// Reference tracker instead of a model: oracle, absent, random, or
    /// noisy.
    #[arg(long, value_name = "NAME")]
    stub: Option<String>,
    /// Tracker name used for the results directory [default: stub name or
    /// "toy"].
    #[arg(long, value_name = "NAME")]
    name: Option<String>,
    /// Seed for the randomized stubs [default: 42].
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Results root; files go to <out>/<name>/<sequence_id>.json.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Benchmark root (also read from ANTIUAV_DATA).
    #[arg(long, env = "ANTIUAV_DATA", value_name = "DIR")]
    data: Option<PathBuf>,
    /// Split to evaluate on: train, val, or test [default: test].
    #[arg(long, value_name = "NAME")]
    split: Option<String>,
    /// Annotations to score against: infrared, visible, or both
    /// [default: infrared; protocol 3 defaults to both].
    #[arg(long, value_name = "NAME")]
    modality: Option<String>,
    /// Results directory of one tracker; repeat for side-by-side tables.
    #[arg(long, value_name = "DIR", action = clap::ArgAction::Append)]
    results: Vec<PathBuf>,
    /// Comparison protocol: 1, 2, or 3 [default: 1].
    #[arg(long, value_name = "P")]
    protocol: Option<String>,
    /// Declared training-data provenance, recorded in the report
    /// [default: "unspecified"].
    #[arg(long, value_name = "TEXT")]
    provenance: Option<String>,
    /// Report output directory (report.md, report.csv, curve data).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Benchmark root (also read from ANTIUAV_DATA).
    #[arg(long, env = "ANTIUAV_DATA", value_name = "DIR")]
    data: Option<PathBuf>,
    /// Split to summarize: train, val, or test [default: train].
    #[arg(long, value_name = "NAME")]
    split: Option<String>,
    /// Also write the statistics JSON to this file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Benchmark root (also read from ANTIUAV_DATA).
    #[arg(long, env = "ANTIUAV_DATA", value_name = "DIR")]
    data: Option<PathBuf>,
    /// Split the results were produced on: train, val, or test
    /// [default: test].
    #[arg(long, value_name = "NAME")]
    split: Option<String>,
    /// Annotations to score against: infrared, visible, or both
    /// [default: infrared].
    #[arg(long, value_name = "NAME")]
    modality: Option<String>,
    /// Results directory of one tracker; repeat for several curves.
    #[arg(long, value_name = "DIR", action = clap::ArgAction::Append)]
    results: Vec<PathBuf>,
    /// Directory for <tracker>.precision.csv / <tracker>.success.csv.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

// --- config file -------------------------------------------------------------

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    synth: SynthSection,
    train: TrainSection,
    track: TrackSection,
    eval: EvalSection,
    stats: StatsSection,
    plot: PlotSection,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct SynthSection {
    out: Option<PathBuf>,
    train: Option<usize>,
    val: Option<usize>,
    test: Option<usize>,
    seed: Option<u64>,
    profile: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct TrainSection {
    data: Option<PathBuf>,
    strategy: Option<String>,
    alpha: Option<f64>,
    beta: Option<f64>,
    steps: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    n_pnum: Option<usize>,
    val_every: Option<usize>,
    modality: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    log: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct TrackSection {
    data: Option<PathBuf>,
    split: Option<String>,
    modality: Option<String>,
    ckpt: Option<PathBuf>,
    stub: Option<String>,
    name: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct EvalSection {
    data: Option<PathBuf>,
    split: Option<String>,
    modality: Option<String>,
    results: Option<Vec<PathBuf>>,
    protocol: Option<String>,
    provenance: Option<String>,
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct StatsSection {
    data: Option<PathBuf>,
    split: Option<String>,
    out: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct PlotSection {
    data: Option<PathBuf>,
    split: Option<String>,
    modality: Option<String>,
    results: Option<Vec<PathBuf>>,
    out: Option<PathBuf>,
}

// --- error taxonomy -----------------------------------------------------------

enum CliError {
    /// Bad flags, configuration, or input content: exit 1.
    Validation(String),
    /// Failure while doing the work (I/O, compute): exit 2.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } => CliError::Runtime(e.to_string()),
            SynthError::Annotation(inner) => inner.into(),
            SynthError::Image(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<crate::image::ImageError> for CliError {
    fn from(e: crate::image::ImageError) -> Self {
        match e {
            crate::image::ImageError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TrackerError> for CliError {
    fn from(e: TrackerError) -> Self {
        match e {
            TrackerError::Io { .. } => CliError::Runtime(e.to_string()),
            TrackerError::BadCheckpointFormat(_)
            | TrackerError::MissingParam(_)
            | TrackerError::BadParamShape { .. }
            | TrackerError::Json(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Runtime(e.to_string()),
            TrainError::Tracker(inner) => inner.into(),
            TrainError::Metrics(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io { .. } => CliError::Runtime(e.to_string()),
            EvalError::Annotation(inner) => inner.into(),
            EvalError::Tracker(inner) => inner.into(),
            EvalError::Image(inner) => inner.into(),
            EvalError::Metrics(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("writing {}: {e}", path.display()))
}

// --- entry points -------------------------------------------------------------

/// Runs the CLI against stdout/stderr and returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    run_with_output(argv, &mut out, &mut err)
}

/// Runs the CLI with explicit output streams (used by tests).
pub fn run_with_output(argv: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_VALIDATION
                }
            };
        }
    };
    let file = match load_file_config(cli.config.as_deref()) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Cmd::Synth(args) => cmd_synth(args, file.synth, out),
        Cmd::Train(args) => cmd_train(args, file.train, out),
        Cmd::Track(args) => cmd_track(args, file.track, out),
        Cmd::Eval(args) => cmd_eval(args, file.eval, out),
        Cmd::Stats(args) => cmd_stats(args, file.stats, out),
        Cmd::Plot(args) => cmd_plot(args, file.plot, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.exit_code()
        }
    }
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| validation(format!("config {}: {e}", path.display())))
}

fn require<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| validation(format!("missing {flag} (pass the flag or set it in --config)")))
}

fn parse_with<T, E: std::fmt::Display>(
    v: &str,
    what: &str,
    parse: impl FnOnce(&str) -> Result<T, E>,
) -> Result<T, CliError> {
    parse(v).map_err(|e| validation(format!("{what}: {e}")))
}

fn parse_split(v: Option<String>, default: SplitName) -> Result<SplitName, CliError> {
    match v {
        Some(s) => parse_with(&s, "--split", str::parse::<SplitName>),
        None => Ok(default),
    }
}

fn parse_modality(v: &str) -> Result<Modality, CliError> {
    match v {
        "infrared" => Ok(Modality::Infrared),
        "visible" => Ok(Modality::Visible),
        other => Err(validation(format!(
            "--modality: unknown modality '{other}' (expected infrared or visible)"
        ))),
    }
}

/// Modalities selected by a `--modality` value that may be "both".
fn parse_modalities(v: Option<String>, default_both: bool) -> Result<Vec<Modality>, CliError> {
    match v.as_deref() {
        None if default_both => Ok(vec![Modality::Infrared, Modality::Visible]),
        None => Ok(vec![Modality::Infrared]),
        Some("both") => Ok(vec![Modality::Infrared, Modality::Visible]),
        Some(one) => Ok(vec![parse_modality(one)?]),
    }
}

fn seed_line(out: &mut dyn Write, seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => {
            let _ = writeln!(out, "seed: {s}");
            s
        }
        None => {
            let _ = writeln!(out, "seed: {DEFAULT_SEED} (default)");
            DEFAULT_SEED
        }
    }
}

// --- subcommands ---------------------------------------------------------------

/// A directory is recognized as a previously generated benchmark when all
/// three split manifests exist; only such directories are replaced on
/// rerun.
fn is_benchmark_tree(root: &Path) -> bool {
    SplitName::ALL
        .iter()
        .all(|s| manifest_path(root, *s).is_file())
}

fn cmd_synth(args: SynthArgs, file: SynthSection, out: &mut dyn Write) -> Result<(), CliError> {
    let root = require(args.out.or(file.out), "--out")?;
    let n_train = args.train.or(file.train).unwrap_or(2);
    let n_val = args.val.or(file.val).unwrap_or(1);
    let n_test = args.test.or(file.test).unwrap_or(1);
    let profile = match args.profile.or(file.profile) {
        Some(p) => parse_with(&p, "--profile", str::parse::<Profile>)?,
        None => Profile::Mixed,
    };
    let seed = seed_line(out, args.seed.or(file.seed));

    if root.exists() {
        if !is_benchmark_tree(&root) {
            return Err(validation(format!(
                "output path {} exists and is not a generated benchmark; refusing to overwrite",
                root.display()
            )));
        }
        std::fs::remove_dir_all(&root)
            .map_err(|e| CliError::Runtime(format!("replacing {}: {e}", root.display())))?;
    }

    let bench = make_benchmark(&root, n_train, n_val, n_test, &profile.config(seed), seed)?;
    let _ = writeln!(out, "profile: {profile}");
    let _ = writeln!(out, "root: {}", bench.root.display());
    for (name, split) in [
        ("train", &bench.train),
        ("val", &bench.val),
        ("test", &bench.test),
    ] {
        let frames: usize = split
            .pairs()
            .iter()
            .map(|p| p.infrared().len() + p.visible().len())
            .sum();
        let _ = writeln!(out, "{name}: {} pairs, {frames} frames", split.pairs().len());
    }
    Ok(())
}

/// Loads one modality of a split into in-memory training sequences.
fn load_train_sequences(
    root: &Path,
    split: &DatasetSplit,
    modality: Modality,
) -> Result<Vec<TrainSequence>, CliError> {
    let mut seqs = Vec::with_capacity(split.pairs().len());
    for pair in split.pairs() {
        let ann = pair.modality(modality);
        let frames =
            crate::eval::load_sequence(root, split.name(), pair.pair_id(), modality, ann)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        seqs.push(TrainSequence {
            sequence_id: ann.sequence_id().to_string(),
            frames,
            truth: ann.frames().to_vec(),
        });
    }
    Ok(seqs)
}

fn cmd_train(args: TrainArgs, file: TrainSection, out: &mut dyn Write) -> Result<(), CliError> {
    let root = require(args.data.or(file.data), "--data")?;
    let ckpt_path = require(args.out.or(file.out), "--out")?;
    let log_path = args.log.or(file.log).unwrap_or_else(|| {
        let mut s = ckpt_path.as_os_str().to_os_string();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let strategy = match args.strategy.or(file.strategy) {
        Some(s) => parse_with(&s, "--strategy", str::parse::<Strategy>)?,
        None => Strategy::Dfsc,
    };
    let modality = match args.modality.or(file.modality) {
        Some(m) => parse_modality(&m)?,
        None => Modality::Infrared,
    };
    let seed = seed_line(out, args.seed.or(file.seed));
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        strategy,
        alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
        beta: args.beta.or(file.beta).unwrap_or(defaults.beta),
        n_pnum: args.n_pnum.or(file.n_pnum).unwrap_or(defaults.n_pnum),
        base_lr: args.lr.or(file.lr).unwrap_or(defaults.base_lr),
        total_steps: args.steps.or(file.steps).unwrap_or(defaults.total_steps),
        batch_size: args
            .batch_size
            .or(file.batch_size)
            .unwrap_or(defaults.batch_size),
        val_every: args.val_every.or(file.val_every).unwrap_or(0),
        seed,
        ..defaults
    };

    let train_split = load_split(&root, SplitName::Train)?;
    let train = load_train_sequences(&root, &train_split, modality)?;
    let val = match load_split(&root, SplitName::Val) {
        Ok(split) => load_train_sequences(&root, &split, modality)?,
        Err(AnnotationError::Io { ref source, .. })
            if source.kind() == std::io::ErrorKind::NotFound =>
        {
            let _ = writeln!(out, "no val split found: skipping calibration");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };

    let _ = writeln!(
        out,
        "training: strategy {} | alpha {} | {} steps | {} sequences ({modality})",
        cfg.strategy,
        cfg.alpha,
        cfg.total_steps,
        train.len()
    );
    let (model, log) = fit(&train, &val, ModelConfig::default(), &cfg)?;

    model.save(&ckpt_path)?;
    let mut log_text = String::new();
    for step in &log.steps {
        log_text.push_str(&serde_json::to_string(step).expect("step record serializes"));
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text).map_err(write_err(&log_path))?;

    if let Some(last) = log.steps.last() {
        let _ = writeln!(out, "final loss: {:.6}", last.total);
    }
    if let Some(cal) = log.calibration {
        let _ = writeln!(
            out,
            "calibrated theta: {:.2} (val mSA {:.4})",
            cal.theta, cal.msa
        );
    }
    let _ = writeln!(out, "checkpoint: {}", ckpt_path.display());
    let _ = writeln!(out, "log: {} ({} steps)", log_path.display(), log.steps.len());
    Ok(())
}

fn parse_stub(v: &str, seed: u64) -> Result<StubTracker, CliError> {
    match v {
        "oracle" => Ok(StubTracker::Oracle),
        "absent" => Ok(StubTracker::AlwaysAbsent),
        "random" => Ok(StubTracker::Random { seed }),
        "noisy" => Ok(StubTracker::Noisy {
            seed,
            magnitude_px: 5.0,
        }),
        other => Err(validation(format!(
            "--stub: unknown stub '{other}' (expected oracle, absent, random, or noisy)"
        ))),
    }
}

fn cmd_track(args: TrackArgs, file: TrackSection, out: &mut dyn Write) -> Result<(), CliError> {
    let root = require(args.data.or(file.data), "--data")?;
    let results_root = require(args.out.or(file.out), "--out")?;
    let split_name = parse_split(args.split.or(file.split), SplitName::Test)?;
    let modalities = parse_modalities(args.modality.or(file.modality), false)?;
    let stub = args.stub.or(file.stub);
    let ckpt = args.ckpt.or(file.ckpt);
    let seed = seed_line(out, args.seed.or(file.seed));

    let split = load_split(&root, split_name)?;
    let mut results: Vec<TrackResult> = Vec::new();
    let mut skipped = Vec::new();
    let name;
    match (stub, ckpt) {
        (Some(stub), None) => {
            let stub = parse_stub(&stub, seed)?;
            name = args.name.or(file.name).unwrap_or_else(|| stub.name().to_string());
            for m in &modalities {
                let anns: Vec<_> = split.sequences(*m).cloned().collect();
                let mut r = stub_results(stub, &anns);
                for t in &mut r {
                    t.tracker_name = name.clone();
                }
                results.extend(r);
            }
        }
        (None, Some(ckpt)) => {
            let model = Model::load(&ckpt)?;
            name = args.name.or(file.name).unwrap_or_else(|| "toy".to_string());
            for m in &modalities {
                let (r, s) = run_tracker(&model, &root, &split, *m, &name)?;
                results.extend(r);
                skipped.extend(s);
            }
        }
        (None, None) => {
            return Err(validation("pass either --ckpt or --stub to choose a tracker"));
        }
        (Some(_), Some(_)) => unreachable!("clap conflicts_with rejects this"),
    }

    write_results(&results_root, &results)?;
    let _ = writeln!(
        out,
        "tracked {} sequences ({split_name} split) as '{name}'",
        results.len()
    );
    for s in &skipped {
        let _ = writeln!(out, "skipped {}: {}", s.sequence_id, s.reason);
    }
    let _ = writeln!(out, "results: {}", results_root.join(&name).display());
    Ok(())
}

/// Shared by eval and plot: load annotations, ingest results directories,
/// and score everything.
fn load_and_evaluate(
    root: &Path,
    split_name: SplitName,
    modalities: &[Modality],
    results_dirs: &[PathBuf],
    protocol: Protocol,
    provenance: &str,
) -> Result<EvalReport, CliError> {
    if results_dirs.is_empty() {
        return Err(validation("pass at least one --results directory"));
    }
    let split = load_split(root, split_name)?;
    let mut annotations = Vec::new();
    for m in modalities {
        annotations.extend(split.sequences(*m).cloned());
    }
    let mut results = Vec::new();
    for dir in results_dirs {
        results.extend(read_results(dir)?);
    }
    Ok(evaluate(&results, &annotations, protocol, provenance)?)
}

fn write_curve_files(
    report: &EvalReport,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    for t in &report.trackers {
        for (kind, curve) in [("precision", &t.precision), ("success", &t.success)] {
            let path = dir.join(format!("{}.{kind}.csv", t.tracker_name));
            let data = render_curve_data(curve);
            let _ = writeln!(out, "{}: {} lines", path.display(), data.lines().count());
            std::fs::write(&path, data).map_err(write_err(&path))?;
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, file: EvalSection, out: &mut dyn Write) -> Result<(), CliError> {
    let root = require(args.data.or(file.data), "--data")?;
    let out_dir = require(args.out.or(file.out), "--out")?;
    let split_name = parse_split(args.split.or(file.split), SplitName::Test)?;
    let protocol = match args.protocol.or(file.protocol) {
        Some(p) => parse_with(&p, "--protocol", str::parse::<Protocol>)?,
        None => Protocol::I,
    };
    let modalities = parse_modalities(
        args.modality.or(file.modality),
        protocol == Protocol::III,
    )?;
    let provenance = args
        .provenance
        .or(file.provenance)
        .unwrap_or_else(|| "unspecified".to_string());
    let results_dirs = if args.results.is_empty() {
        file.results.unwrap_or_default()
    } else {
        args.results
    };

    let report = load_and_evaluate(
        &root,
        split_name,
        &modalities,
        &results_dirs,
        protocol,
        &provenance,
    )?;

    std::fs::create_dir_all(&out_dir).map_err(write_err(&out_dir))?;
    let md = render_markdown(&report);
    let md_path = out_dir.join("report.md");
    std::fs::write(&md_path, &md).map_err(write_err(&md_path))?;
    let csv_path = out_dir.join("report.csv");
    std::fs::write(&csv_path, render_csv(&report)).map_err(write_err(&csv_path))?;
    write_curve_files(&report, &out_dir, out)?;
    let _ = write!(out, "{md}");
    let _ = writeln!(out, "\nreport: {}", md_path.display());
    Ok(())
}

fn cmd_stats(args: StatsArgs, file: StatsSection, out: &mut dyn Write) -> Result<(), CliError> {
    let root = require(args.data.or(file.data), "--data")?;
    let split_name = parse_split(args.split.or(file.split), SplitName::Train)?;
    let split = load_split(&root, split_name)?;
    let stats = dataset_statistics(&split);
    let text = serde_json::to_string_pretty(&stats).expect("statistics serialize");
    let _ = writeln!(out, "{text}");
    if let Some(path) = args.out.or(file.out) {
        std::fs::write(&path, &text).map_err(write_err(&path))?;
        let _ = writeln!(out, "written: {}", path.display());
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs, file: PlotSection, out: &mut dyn Write) -> Result<(), CliError> {
    let root = require(args.data.or(file.data), "--data")?;
    let out_dir = require(args.out.or(file.out), "--out")?;
    let split_name = parse_split(args.split.or(file.split), SplitName::Test)?;
    let modalities = parse_modalities(args.modality.or(file.modality), false)?;
    let results_dirs = if args.results.is_empty() {
        file.results.unwrap_or_default()
    } else {
        args.results
    };
    let report = load_and_evaluate(
        &root,
        split_name,
        &modalities,
        &results_dirs,
        Protocol::I,
        "unspecified",
    )?;
    std::fs::create_dir_all(&out_dir).map_err(write_err(&out_dir))?;
    write_curve_files(&report, &out_dir, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{precision_thresholds, success_thresholds};
    use clap::CommandFactory;
    use std::collections::BTreeMap;

    fn run_cli(args: &[&str]) -> (i32, String, String) {
        let mut argv = vec!["antiuav".to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with_output(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    /// Hash of every file in a tree, for byte-identity comparisons.
    fn tree_digest(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        fn walk(dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
            let mut entries: Vec<_> = std::fs::read_dir(dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            entries.sort();
            for p in entries {
                if p.is_dir() {
                    walk(&p, acc);
                } else {
                    acc.insert(p.clone(), std::fs::read(&p).unwrap());
                }
            }
        }
        let mut acc = BTreeMap::new();
        walk(root, &mut acc);
        acc
    }

    #[test]
    fn every_flag_documents_itself() {
        // Reflection over the clap registry: every argument of every
        // subcommand carries help text, and no undocumented flag exists.
        let cmd = Cli::command();
        for sub in cmd.get_subcommands() {
            for arg in sub.get_arguments() {
                assert!(
                    arg.get_help().is_some(),
                    "{}: --{} lacks help text",
                    sub.get_name(),
                    arg.get_id()
                );
            }
            assert!(sub.get_about().is_some(), "{} lacks a description", sub.get_name());
        }
        for arg in cmd.get_arguments() {
            assert!(arg.get_help().is_some(), "global --{} lacks help", arg.get_id());
        }
    }

    #[test]
    fn help_exits_zero_and_unknown_flags_exit_one() {
        let (code, out, _) = run_cli(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("synth"));
        let (code, _, err) = run_cli(&["synth", "--no-such-flag"]);
        assert_eq!(code, 1);
        assert!(err.contains("no-such-flag"));
        let (code, _, _) = run_cli(&["frobnicate"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn synth_generates_reruns_identically_and_validates_counts() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("bench");
        let out_flag = root.to_str().unwrap();
        let args = [
            "synth", "--out", out_flag, "--train", "1", "--val", "1", "--test", "1", "--seed",
            "7", "--profile", "easy",
        ];
        let (code, out, err) = run_cli(&args);
        assert_eq!(code, 0, "stderr: {err}");
        assert!(out.contains("seed: 7"));
        assert!(out.contains("train: 1 pairs"));
        let first = tree_digest(&root);

        // Rerun with identical flags: exit 0, byte-identical tree.
        let (code, _, _) = run_cli(&args);
        assert_eq!(code, 0);
        assert_eq!(tree_digest(&root), first);

        // Zero pairs is a validation error.
        let other = tmp.path().join("bad");
        let (code, _, err) = run_cli(&[
            "synth", "--out", other.to_str().unwrap(), "--train", "0", "--val", "1", "--test",
            "1",
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("split"), "stderr: {err}");

        // Refuses to clobber a directory that is not a benchmark.
        let precious = tmp.path().join("precious");
        std::fs::create_dir_all(precious.join("keep")).unwrap();
        let (code, _, err) = run_cli(&[
            "synth", "--out", precious.to_str().unwrap(), "--train", "1", "--val", "1",
            "--test", "1",
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("refusing"), "stderr: {err}");
        assert!(precious.join("keep").exists());
    }

    #[test]
    fn seed_defaults_to_42_and_is_printed() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("bench");
        let (code, out, _) = run_cli(&[
            "synth", "--out", root.to_str().unwrap(), "--train", "1", "--val", "1", "--test",
            "1", "--profile", "easy",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("seed: 42 (default)"), "output: {out}");
    }

    #[test]
    fn config_file_supplies_flags_and_cli_overrides() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg_path = tmp.path().join("exp.toml");
        let root = tmp.path().join("bench");
        std::fs::write(
            &cfg_path,
            format!(
                "[synth]\nout = \"{}\"\ntrain = 1\nval = 1\ntest = 1\nseed = 9\nprofile = \"tc\"\n",
                root.display()
            ),
        )
        .unwrap();
        // Everything from the file.
        let (code, out, err) = run_cli(&["synth", "--config", cfg_path.to_str().unwrap()]);
        assert_eq!(code, 0, "stderr: {err}");
        assert!(out.contains("seed: 9"));
        assert!(out.contains("profile: tc"));

        // CLI overrides the file (new seed changes the tree).
        let first = tree_digest(&root);
        let (code, out, _) = run_cli(&[
            "synth",
            "--config",
            cfg_path.to_str().unwrap(),
            "--seed",
            "10",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("seed: 10"));
        assert_ne!(tree_digest(&root), first);

        // Unknown keys in the file are rejected.
        std::fs::write(&cfg_path, "[synth]\nbananas = 3\n").unwrap();
        let (code, _, err) = run_cli(&["synth", "--config", cfg_path.to_str().unwrap()]);
        assert_eq!(code, 1);
        assert!(err.contains("bananas"));
    }

    /// One shared tiny benchmark + stub results exercising track → eval →
    /// plot → stats end to end.
    #[test]
    fn track_eval_plot_stats_flow() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("bench");
        let (code, _, err) = run_cli(&[
            "synth", "--out", root.to_str().unwrap(), "--train", "1", "--val", "1", "--test",
            "2", "--seed", "3", "--profile", "easy",
        ]);
        assert_eq!(code, 0, "stderr: {err}");
        let data = root.to_str().unwrap();

        // Track with the oracle stub.
        let results_root = tmp.path().join("results");
        let (code, out, err) = run_cli(&[
            "track", "--data", data, "--split", "test", "--modality", "infrared", "--stub",
            "oracle", "--out", results_root.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "stderr: {err}");
        assert!(out.contains("tracked 2 sequences"));
        assert!(results_root.join("oracle").is_dir());

        // Evaluate: oracle scores 100.00 everywhere.
        let report_dir = tmp.path().join("report");
        let oracle_dir = results_root.join("oracle");
        let (code, out, err) = run_cli(&[
            "eval", "--data", data, "--split", "test", "--modality", "infrared", "--results",
            oracle_dir.to_str().unwrap(), "--out", report_dir.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "stderr: {err}");
        assert!(out.contains("100.00"), "output: {out}");
        assert!(report_dir.join("report.md").is_file());
        assert!(report_dir.join("report.csv").is_file());

        // Eval and report files are byte-identical on rerun.
        let md_first = std::fs::read(report_dir.join("report.md")).unwrap();
        let (code, _, _) = run_cli(&[
            "eval", "--data", data, "--split", "test", "--modality", "infrared", "--results",
            oracle_dir.to_str().unwrap(), "--out", report_dir.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert_eq!(std::fs::read(report_dir.join("report.md")).unwrap(), md_first);

        // Missing result: drop one sequence's file, expect exit 1 naming it.
        let missing_dir = tmp.path().join("partial");
        std::fs::create_dir_all(missing_dir.join("partial")).unwrap();
        let mut files: Vec<_> = std::fs::read_dir(&oracle_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        std::fs::copy(
            &files[0],
            missing_dir.join("partial").join(files[0].file_name().unwrap()),
        )
        .unwrap();
        let (code, _, err) = run_cli(&[
            "eval", "--data", data, "--split", "test", "--modality", "infrared", "--results",
            missing_dir.join("partial").to_str().unwrap(), "--out",
            tmp.path().join("r2").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        let dropped = files[1].file_stem().unwrap().to_str().unwrap();
        assert!(err.contains(dropped), "stderr: {err}");

        // Plot: one curve file per (tracker, curve kind), line count =
        // threshold count.
        let plot_dir = tmp.path().join("plots");
        let (code, out, err) = run_cli(&[
            "plot", "--data", data, "--split", "test", "--modality", "infrared", "--results",
            oracle_dir.to_str().unwrap(), "--out", plot_dir.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "stderr: {err}");
        let precision = std::fs::read_to_string(plot_dir.join("oracle.precision.csv")).unwrap();
        assert_eq!(precision.lines().count(), precision_thresholds().len());
        let success = std::fs::read_to_string(plot_dir.join("oracle.success.csv")).unwrap();
        assert_eq!(success.lines().count(), success_thresholds().len());
        assert!(out.contains("oracle.precision.csv"));

        // Stats prints deterministic JSON.
        let (code, out1, err) = run_cli(&["stats", "--data", data, "--split", "test"]);
        assert_eq!(code, 0, "stderr: {err}");
        assert!(out1.contains("\"sequences\": 4"), "output: {out1}");
        let (_, out2, _) = run_cli(&["stats", "--data", data, "--split", "test"]);
        assert_eq!(out1, out2);

        // Track requires choosing a tracker.
        let (code, _, err) = run_cli(&[
            "track", "--data", data, "--out", tmp.path().join("r3").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("--ckpt or --stub"));
    }

    #[test]
    fn train_writes_checkpoint_and_log_with_cross_column() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("bench");
        let (code, _, err) = run_cli(&[
            "synth", "--out", root.to_str().unwrap(), "--train", "2", "--val", "1", "--test",
            "1", "--seed", "5", "--profile", "easy",
        ]);
        assert_eq!(code, 0, "stderr: {err}");
        let ckpt = tmp.path().join("model.json");

        // Normal strategy: l_cross column present and zero.
        let (code, out, err) = run_cli(&[
            "train", "--data", root.to_str().unwrap(), "--strategy", "normal", "--steps", "2",
            "--lr", "0.001", "--out", ckpt.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "stderr: {err}");
        assert!(out.contains("seed: 42 (default)"));
        assert!(out.contains("calibrated theta"));
        assert!(ckpt.is_file());
        let log = std::fs::read_to_string(tmp.path().join("model.json.log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 2);
        for line in log.lines() {
            let row: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(row["l_cross"].as_f64().unwrap(), 0.0);
            assert!(row["total"].as_f64().unwrap().is_finite());
        }

        // Checkpoint loads and carries the strategy tag.
        let model = Model::load(&ckpt).unwrap();
        assert_eq!(model.config().strategy, "normal");

        // dfsc writes nonzero l_cross rows.
        let ckpt2 = tmp.path().join("model2.json");
        let (code, _, err) = run_cli(&[
            "train", "--data", root.to_str().unwrap(), "--strategy", "dfsc", "--alpha", "0.25",
            "--steps", "2", "--lr", "0.001", "--out", ckpt2.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "stderr: {err}");
        let log = std::fs::read_to_string(tmp.path().join("model2.json.log.jsonl")).unwrap();
        for line in log.lines() {
            let row: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(row["l_cross"].as_f64().unwrap() > 0.0);
        }

        // Unknown strategy is a validation error.
        let (code, _, err) = run_cli(&[
            "train", "--data", root.to_str().unwrap(), "--strategy", "sideways", "--out",
            tmp.path().join("x.json").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("sideways"));
    }

    #[test]
    fn train_rejects_cross_strategy_on_single_sequence_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("bench");
        let (code, _, _) = run_cli(&[
            "synth", "--out", root.to_str().unwrap(), "--train", "1", "--val", "1", "--test",
            "1", "--seed", "6", "--profile", "easy",
        ]);
        assert_eq!(code, 0);
        let (code, _, err) = run_cli(&[
            "train", "--data", root.to_str().unwrap(), "--strategy", "dfsc", "--steps", "1",
            "--batch-size", "1", "--out", tmp.path().join("m.json").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("at least 2 sequences"), "stderr: {err}");

        // With the default batch size the dataset is too small outright.
        let (code, _, err) = run_cli(&[
            "train", "--data", root.to_str().unwrap(), "--strategy", "normal", "--steps", "1",
            "--out", tmp.path().join("m.json").to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("batch size"), "stderr: {err}");
    }
}
