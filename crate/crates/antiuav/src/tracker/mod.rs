//! The toy query-guided two-stage tracker.
//!
//! A small strided convolutional backbone turns images into feature maps;
//! a query box from the first visible frame is pooled into a fixed-size
//! query feature. Two modulation stages inject the query into detection:
//!
//! * **class-level**: the projected query acts as a depthwise correlation
//!   kernel slid over the projected search features, and a region-proposal
//!   head reads candidate boxes off the correlated map;
//! * **instance-level**: each proposal's pooled feature is gated by the
//!   projected query via an elementwise product before a small head scores
//!   target-vs-background confidence and refines the box.
//!
//! All forward math runs on the autodiff tape, so training and the
//! finite-difference verification suite share one implementation.
//! Checkpoints are self-describing JSON and round-trip bit-exactly.

pub mod anchors;
pub mod infer;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::tape::{Arr, Tape, Var};
use anchors::AnchorConfig;

/// Errors from model construction, checkpoints, or forward passes.
#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("non-finite values in {0}")]
    NonFiniteInput(&'static str),
    #[error("image {height}x{width} too small; each side must be at least 32")]
    ImageTooSmall { height: usize, width: usize },
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("stage expects a {expected:?}-modulated feature, got {got:?}")]
    WrongModulationKind {
        expected: ModulationKind,
        got: ModulationKind,
    },
    #[error("query box has zero area")]
    DegenerateQueryBox,
    #[error("sequence has no visible frame to initialize from")]
    NoVisibleFrames,
    #[error("proposal budget must be at least 1, got {0}")]
    BadProposalCount(usize),
    #[error("checkpoint is missing parameter '{0}'")]
    MissingParam(String),
    #[error("parameter '{name}': expected shape {expected:?}, got {got:?}")]
    BadParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("unsupported checkpoint format tag '{0}'")]
    BadCheckpointFormat(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrackerError + '_ {
    move |source| TrackerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Structural hyperparameters plus the runtime knobs carried in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Image channels the backbone consumes (1 grayscale, 3 color).
    pub input_channels: usize,
    /// Output channels of the four backbone stages.
    pub backbone_channels: [usize; 4],
    /// Side length of pooled query/proposal features.
    pub roi_size: usize,
    /// Width of the refinement head's hidden layer.
    pub hidden_units: usize,
    /// Total backbone downsampling factor.
    pub stride: usize,
    pub anchor: AnchorConfig,
    /// Proposal budget fed to the instance stage.
    pub n_pnum: usize,
    /// Existence threshold: the tracker reports the target present when the
    /// squashed confidence reaches this value.
    pub theta_exist: f64,
    /// Provenance tag describing how the parameters were trained.
    pub strategy: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            backbone_channels: [16, 32, 32, 32],
            roi_size: 7,
            hidden_units: 128,
            stride: 8,
            anchor: AnchorConfig::default(),
            n_pnum: 64,
            theta_exist: 0.5,
            strategy: "untrained".to_string(),
        }
    }
}

impl ModelConfig {
    /// Feature channels seen by both modulation stages.
    pub fn feature_channels(&self) -> usize {
        self.backbone_channels[3]
    }

    /// Anchor shapes per feature cell.
    pub fn anchors_per_cell(&self) -> usize {
        self.anchor.aspect_ratios.len()
    }

    /// Spatial size of the backbone output for an input of the given size.
    /// Three stride-2 stages halve (with k=3, pad=1 rounding), the last
    /// stage preserves.
    pub fn feature_map_size(&self, height: usize, width: usize) -> (usize, usize) {
        let down = |mut v: usize| {
            for _ in 0..3 {
                v = (v + 2 - 3) / 2 + 1;
            }
            v
        };
        (down(height), down(width))
    }

    /// `(name, shape)` of every learnable parameter, in storage order.
    pub fn parameter_table(&self) -> Vec<(String, Vec<usize>)> {
        let cin = self.input_channels;
        let [c0, c1, c2, c3] = self.backbone_channels;
        let c = self.feature_channels();
        let a = self.anchors_per_cell();
        let k = self.roi_size;
        let hidden = self.hidden_units;
        let mut table: Vec<(String, Vec<usize>)> = Vec::new();
        let mut push = |name: &str, shape: Vec<usize>| table.push((name.to_string(), shape));

        push("backbone.conv0.w", vec![c0, cin, 3, 3]);
        push("backbone.conv0.b", vec![c0]);
        push("backbone.conv1.w", vec![c1, c0, 3, 3]);
        push("backbone.conv1.b", vec![c1]);
        push("backbone.conv2.w", vec![c2, c1, 3, 3]);
        push("backbone.conv2.b", vec![c2]);
        push("backbone.conv3.w", vec![c3, c2, 3, 3]);
        push("backbone.conv3.b", vec![c3]);

        push("csm.query_proj.w", vec![c, c, k, k]);
        push("csm.query_proj.b", vec![c]);
        push("csm.search_proj.w", vec![c, c, 1, 1]);
        push("csm.search_proj.b", vec![c]);
        push("csm.out_proj.w", vec![c, c, 1, 1]);
        push("csm.out_proj.b", vec![c]);

        push("rpn.trunk.w", vec![c, c, 3, 3]);
        push("rpn.trunk.b", vec![c]);
        push("rpn.objectness.w", vec![a, c, 1, 1]);
        push("rpn.objectness.b", vec![a]);
        push("rpn.box_delta.w", vec![4 * a, c, 1, 1]);
        push("rpn.box_delta.b", vec![4 * a]);

        push("ism.query_proj.w", vec![c, c, 1, 1]);
        push("ism.query_proj.b", vec![c]);
        push("ism.roi_proj.w", vec![c, c, 1, 1]);
        push("ism.roi_proj.b", vec![c]);
        push("ism.out_proj.w", vec![c, c, 1, 1]);
        push("ism.out_proj.b", vec![c]);

        push("rcnn.hidden.w", vec![hidden, c * k * k]);
        push("rcnn.hidden.b", vec![hidden]);
        push("rcnn.confidence.w", vec![1, hidden]);
        push("rcnn.confidence.b", vec![1]);
        push("rcnn.refine.w", vec![4, hidden]);
        push("rcnn.refine.b", vec![4]);
        table
    }
}

/// Logit the classification biases start from, favoring background so the
/// untrained detector is quiet rather than firing everywhere.
const BACKGROUND_BIAS: f64 = -2.0;

/// The tracker: configuration plus named parameter arrays.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: BTreeMap<String, Arr>,
}

impl Model {
    /// Initializes parameters from `seed`: weights get fan-in-scaled
    /// uniform values, biases start at zero except the classification
    /// biases, which favor background.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (name, shape) in config.parameter_table() {
            let mut arr = Arr::zeros(&shape);
            if name.ends_with(".w") {
                // Fan-in: all dimensions past the first (output) one.
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                arr.fill_uniform(&mut rng, -bound, bound);
            } else if name == "rpn.objectness.b" || name == "rcnn.confidence.b" {
                for v in arr.data_mut() {
                    *v = BACKGROUND_BIAS;
                }
            }
            params.insert(name, arr);
        }
        Self { config, params }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut ModelConfig {
        &mut self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Arr> {
        &self.params
    }

    pub fn param(&self, name: &str) -> &Arr {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Arr {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    /// Registers every parameter on a tape, in name order.
    pub fn bind<'m>(&'m self, tape: &mut Tape) -> BoundModel<'m> {
        let vars = self
            .params
            .iter()
            .map(|(name, arr)| (name.as_str(), tape.input(arr.clone())))
            .collect();
        BoundModel {
            config: &self.config,
            vars,
        }
    }

    /// Writes a self-describing JSON checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), TrackerError> {
        let blob = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(name, arr)| {
                    (
                        name.clone(),
                        ParamBlob {
                            shape: arr.shape().to_vec(),
                            data: arr.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        let bytes = serde_json::to_vec(&blob)?;
        std::fs::write(path, bytes).map_err(io_err(path))
    }

    /// Loads a checkpoint, validating the format tag and every parameter's
    /// presence, shape, and finiteness against the embedded config.
    pub fn load(path: &Path) -> Result<Self, TrackerError> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let blob: CheckpointFile = serde_json::from_slice(&bytes)?;
        if blob.format != CHECKPOINT_FORMAT {
            return Err(TrackerError::BadCheckpointFormat(blob.format));
        }
        let mut params = BTreeMap::new();
        for (name, shape) in blob.config.parameter_table() {
            let p = blob
                .params
                .get(&name)
                .ok_or_else(|| TrackerError::MissingParam(name.clone()))?;
            if p.shape != shape {
                return Err(TrackerError::BadParamShape {
                    name,
                    expected: shape,
                    got: p.shape.clone(),
                });
            }
            if !p.data.iter().all(|v| v.is_finite()) {
                return Err(TrackerError::NonFiniteInput("checkpoint parameters"));
            }
            params.insert(name, Arr::from_vec(p.shape.clone(), p.data.clone()));
        }
        Ok(Self {
            config: blob.config,
            params,
        })
    }
}

const CHECKPOINT_FORMAT: &str = "antiuav-tracker-v1";

#[derive(Serialize, Deserialize)]
struct ParamBlob {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: ModelConfig,
    params: BTreeMap<String, ParamBlob>,
}

/// Which modulation stage produced a feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModulationKind {
    /// Correlation response over the whole search map.
    ClassLevel,
    /// Gated feature of one pooled proposal.
    InstanceLevel,
}

/// A modulated feature on the tape, tagged with its producing stage so the
/// downstream heads can reject mismatched plumbing.
#[derive(Clone, Copy, Debug)]
pub struct ModulatedFeature {
    pub var: Var,
    pub kind: ModulationKind,
}

/// A backbone output on the tape, with its pixel stride.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMapVar {
    pub var: Var,
    pub stride: usize,
}

/// A pooled query feature held as plain data, reusable across frames.
#[derive(Clone, Debug)]
pub struct QueryFeature {
    /// `(C, k, k)` pooled feature values.
    pub data: Arr,
    /// Image-coordinate box the query was pooled from.
    pub source_box: BoundingBox,
    /// Sequence the query frame belongs to.
    pub source_sequence: String,
}

/// A model whose parameters are registered on a tape.
pub struct BoundModel<'m> {
    config: &'m ModelConfig,
    vars: BTreeMap<&'m str, Var>,
}

impl<'m> BoundModel<'m> {
    /// Assembles a bound model from externally registered parameter
    /// variables (one per `parameter_table` entry). This is how the
    /// finite-difference harness drives the network with perturbed
    /// parameters.
    pub fn from_vars(config: &'m ModelConfig, vars: BTreeMap<&'m str, Var>) -> Self {
        for (name, _) in config.parameter_table() {
            assert!(vars.contains_key(name.as_str()), "missing var for '{name}'");
        }
        Self { config, vars }
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    /// Tape variable of a named parameter.
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    /// Parameter variables in name order, for gradient collection.
    pub fn vars(&self) -> impl Iterator<Item = (&'m str, Var)> + '_ {
        self.vars.iter().map(|(n, v)| (*n, *v))
    }

    fn conv_block(
        &self,
        tape: &mut Tape,
        x: Var,
        name: &str,
        stride: usize,
        pad: usize,
    ) -> Var {
        let w = self.var(&format!("{name}.w"));
        let b = self.var(&format!("{name}.b"));
        let c = tape.conv2d(x, w, stride, pad);
        tape.add_bias_chw(c, b)
    }

    /// Backbone forward pass: four 3x3 stages (strides 2, 2, 2, 1) with
    /// rectifier activations, totalling the configured stride of 8.
    pub fn extract_features(
        &self,
        tape: &mut Tape,
        image: &Arr,
    ) -> Result<FeatureMapVar, TrackerError> {
        if image.shape().len() != 3 || image.shape()[0] != self.config.input_channels {
            return Err(TrackerError::ShapeMismatch {
                what: "backbone input",
                expected: format!("({}, H, W)", self.config.input_channels),
                got: format!("{:?}", image.shape()),
            });
        }
        let (h, w) = (image.shape()[1], image.shape()[2]);
        if h < 32 || w < 32 {
            return Err(TrackerError::ImageTooSmall {
                height: h,
                width: w,
            });
        }
        if !image.data().iter().all(|v| v.is_finite()) {
            return Err(TrackerError::NonFiniteInput("backbone input"));
        }
        let x = tape.input(image.clone());
        let mut cur = x;
        for (i, stride) in [2usize, 2, 2, 1].into_iter().enumerate() {
            cur = self.conv_block(tape, cur, &format!("backbone.conv{i}"), stride, 1);
            cur = tape.relu(cur);
        }
        Ok(FeatureMapVar {
            var: cur,
            stride: self.config.stride,
        })
    }

    /// Pools the query box (image coordinates) out of a feature map into a
    /// fixed `(C, k, k)` block via bilinear sampling.
    pub fn encode_query(
        &self,
        tape: &mut Tape,
        feature: FeatureMapVar,
        image_box: &BoundingBox,
    ) -> Result<Var, TrackerError> {
        if image_box.area() == 0.0 {
            return Err(TrackerError::DegenerateQueryBox);
        }
        let s = feature.stride as f64;
        let rect = BoundingBox::new(
            image_box.x1 / s,
            image_box.y1 / s,
            image_box.x2 / s,
            image_box.y2 / s,
        )
        .expect("scaled box stays ordered");
        Ok(tape.roi_align(feature.var, &rect, self.config.roi_size))
    }

    /// Class-level modulation: a full-extent convolution collapses the
    /// pooled query into a per-channel correlation kernel, which is slid
    /// depthwise over the projected search map (a 1x1 kernel, so the pass
    /// is an every-cell channel match against the query signature), then a
    /// channel projection re-aligns the output with the search feature's
    /// channels. The spatial size of the result always equals the search
    /// map's, and the per-cell independence keeps the response localized
    /// no matter how the map size compares to the pooled query's extent.
    pub fn csm_modulate(
        &self,
        tape: &mut Tape,
        query: Var,
        search: Var,
    ) -> Result<ModulatedFeature, TrackerError> {
        let c = self.config.feature_channels();
        let k = self.config.roi_size;
        let q_shape = tape.value(query).shape().to_vec();
        if q_shape != [c, k, k] {
            return Err(TrackerError::ShapeMismatch {
                what: "class-level modulation query",
                expected: format!("[{c}, {k}, {k}]"),
                got: format!("{q_shape:?}"),
            });
        }
        let s_shape = tape.value(search).shape().to_vec();
        if s_shape.len() != 3 || s_shape[0] != c {
            return Err(TrackerError::ShapeMismatch {
                what: "class-level modulation search feature",
                expected: format!("[{c}, h, w]"),
                got: format!("{s_shape:?}"),
            });
        }
        // (C, k, k) -> (C, 1, 1): the query-projection conv has a k x k
        // kernel and no padding. The 1/k damping keeps one optimizer step's
        // effect on the collapsed kernel comparable to a 1x1 projection's —
        // the conv's k²-fold fan-in amplifies weight updates by the same
        // factor, which otherwise destabilizes early training. The constant
        // is absorbed by the learned output projection.
        let kernel = self.conv_block(tape, query, "csm.query_proj", 1, 0);
        let kernel = tape.scale(kernel, 1.0 / k as f64);
        let projected = self.conv_block(tape, search, "csm.search_proj", 1, 0);
        let corr = tape.depthwise_corr(projected, kernel);
        let out = self.conv_block(tape, corr, "csm.out_proj", 1, 0);
        Ok(ModulatedFeature {
            var: out,
            kind: ModulationKind::ClassLevel,
        })
    }

    /// Proposal head: per-cell, per-anchor objectness logits `(A, h, w)`
    /// and box deltas `(4A, h, w)` read off the class-modulated map.
    pub fn rpn_forward(
        &self,
        tape: &mut Tape,
        modulated: ModulatedFeature,
    ) -> Result<(Var, Var), TrackerError> {
        if modulated.kind != ModulationKind::ClassLevel {
            return Err(TrackerError::WrongModulationKind {
                expected: ModulationKind::ClassLevel,
                got: modulated.kind,
            });
        }
        let trunk = self.conv_block(tape, modulated.var, "rpn.trunk", 1, 1);
        let trunk = tape.relu(trunk);
        let scores = self.conv_block(tape, trunk, "rpn.objectness", 1, 0);
        let deltas = self.conv_block(tape, trunk, "rpn.box_delta", 1, 0);
        Ok((scores, deltas))
    }

    /// Instance-level modulation: elementwise gating of a pooled proposal
    /// feature by the projected query, shape-preserving.
    pub fn ism_modulate(
        &self,
        tape: &mut Tape,
        query: Var,
        roi: Var,
    ) -> Result<ModulatedFeature, TrackerError> {
        let c = self.config.feature_channels();
        let k = self.config.roi_size;
        for (what, v) in [
            ("instance-level modulation query", query),
            ("instance-level modulation proposal feature", roi),
        ] {
            let shape = tape.value(v).shape();
            if shape != [c, k, k] {
                return Err(TrackerError::ShapeMismatch {
                    what,
                    expected: format!("[{c}, {k}, {k}]"),
                    got: format!("{shape:?}"),
                });
            }
        }
        let zq = self.conv_block(tape, query, "ism.query_proj", 1, 0);
        let zr = self.conv_block(tape, roi, "ism.roi_proj", 1, 0);
        let gated = tape.mul(zq, zr);
        let out = self.conv_block(tape, gated, "ism.out_proj", 1, 0);
        Ok(ModulatedFeature {
            var: out,
            kind: ModulationKind::InstanceLevel,
        })
    }

    /// Refinement head: target-vs-background logit and a 4-d box delta
    /// relative to the proposal.
    pub fn rcnn_forward(
        &self,
        tape: &mut Tape,
        modulated: ModulatedFeature,
    ) -> Result<(Var, Var), TrackerError> {
        if modulated.kind != ModulationKind::InstanceLevel {
            return Err(TrackerError::WrongModulationKind {
                expected: ModulationKind::InstanceLevel,
                got: modulated.kind,
            });
        }
        let flat = tape.flatten(modulated.var);
        let hidden = tape.linear(
            self.var("rcnn.hidden.w"),
            flat,
            Some(self.var("rcnn.hidden.b")),
        );
        let hidden = tape.relu(hidden);
        let confidence = tape.linear(
            self.var("rcnn.confidence.w"),
            hidden,
            Some(self.var("rcnn.confidence.b")),
        );
        let refine = tape.linear(
            self.var("rcnn.refine.w"),
            hidden,
            Some(self.var("rcnn.refine.b")),
        );
        Ok((confidence, refine))
    }
}
