//! Tree-shaped model graphs: a layer sequence in which `Branches` hold
//! parallel sub-sequences whose bit outputs a following `Concat` stacks
//! along the channel axis.
//!
//! A [`ModelGraph`] can only be built through validation, so every graph
//! handed to the executor has a legal shape chain.

mod convert;
mod exec;
mod format;
mod inception;

pub use convert::{
    convert, convert_str, BatchNormEntry, BranchEntry, BranchesEntry, ConvEntry, DenseEntry,
    FloatModelManifest, InputEntry, KernelSize, LayerEntry, PoolEntry,
};
pub use exec::{
    binarize_input, extract_features, extract_features_batch, forward, forward_profiled,
    run_sequence, run_to_head, Activation, LayerTiming,
};
pub use format::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use inception::{
    full_googlenet, inception_module, mini_googlenet, random_conv, random_dense, InceptionWidths,
    GOOGLENET_WIDTHS,
};

use std::fmt;

use serde::Serialize;

use crate::binlayer::{
    conv_output_dims, pool_output_dims, BinConvWeights, BinDenseWeights, FloatHead, ThresholdSet,
};
use crate::error::{Error, Result};

pub const DEFAULT_INPUT_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Image input, binarized as `pixel >= threshold`.
    Input {
        channels: usize,
        height: usize,
        width: usize,
        threshold: u8,
    },
    BinConv(BinConvWeights),
    /// Dense over the flattened (channel-major) input; emits (rows, 1, 1).
    BinDense(BinDenseWeights),
    Threshold(ThresholdSet),
    MaxPool {
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    GlobalAvgPool,
    Branches(Vec<Vec<LayerSpec>>),
    Concat,
    Head(FloatHead),
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::BinConv(_) => "conv",
            LayerSpec::BinDense(_) => "dense",
            LayerSpec::Threshold(_) => "threshold",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::GlobalAvgPool => "avgpool",
            LayerSpec::Branches(_) => "branches",
            LayerSpec::Concat => "concat",
            LayerSpec::Head(_) => "head",
        }
    }

    /// Short human label, e.g. `conv3x3 16->32`.
    pub fn describe(&self) -> String {
        match self {
            LayerSpec::Input {
                channels,
                height,
                width,
                ..
            } => format!("input {channels}x{height}x{width}"),
            LayerSpec::BinConv(w) => {
                let (kh, kw) = w.kernel();
                format!("conv{kh}x{kw} {}->{}", w.in_channels(), w.out_channels())
            }
            LayerSpec::BinDense(w) => format!("dense {}->{}", w.cols(), w.rows()),
            LayerSpec::Threshold(t) => format!("threshold {}", t.channels()),
            LayerSpec::MaxPool { kernel, stride, .. } => format!("maxpool{kernel}/{stride}"),
            LayerSpec::GlobalAvgPool => "avgpool".into(),
            LayerSpec::Branches(b) => format!("branches x{}", b.len()),
            LayerSpec::Concat => "concat".into(),
            LayerSpec::Head(h) => format!("head {}->{}", h.features(), h.classes()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ActKind {
    Bits,
    Ints,
    Features,
    Probabilities,
}

/// Activation shape; feature vectors use (len, 1, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ActShape {
    pub kind: ActKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ActShape {
    fn new(kind: ActKind, channels: usize, height: usize, width: usize) -> Self {
        Self {
            kind,
            channels,
            height,
            width,
        }
    }

    fn vector(kind: ActKind, len: usize) -> Self {
        Self::new(kind, len, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ActShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ActKind::Bits | ActKind::Ints => write!(
                f,
                "{:?}({}x{}x{})",
                self.kind, self.channels, self.height, self.width
            ),
            _ => write!(f, "{:?}({})", self.kind, self.channels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerShape {
    /// Position in the tree: `3` for a top-level layer, `3.1.0` for layer 0
    /// of branch 1 inside top-level layer 3.
    pub path: String,
    pub kind: &'static str,
    pub input: ActShape,
    pub output: ActShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeReport {
    pub layers: Vec<LayerShape>,
    pub output: ActShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Metadata {
    pub name: String,
    pub labels: Vec<String>,
}

/// A validated, immutable model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    meta: Metadata,
    layers: Vec<LayerSpec>,
    report: ShapeReport,
}

impl ModelGraph {
    pub fn new(meta: Metadata, layers: Vec<LayerSpec>) -> Result<Self> {
        let report = validate(&layers)?;
        if let LayerSpec::Head(h) = layers.last().expect("validated graphs are non-empty") {
            if !meta.labels.is_empty() && meta.labels.len() != h.classes() {
                return Err(Error::graph(
                    layers.len() - 1,
                    format!(
                        "{} class labels for a {}-class head",
                        meta.labels.len(),
                        h.classes()
                    ),
                ));
            }
        }
        Ok(Self {
            meta,
            layers,
            report,
        })
    }

    /// Same graph with new class labels (checked against the head).
    pub fn with_labels(self, labels: Vec<String>) -> Result<Self> {
        let (mut meta, layers) = self.into_parts();
        meta.labels = labels;
        Self::new(meta, layers)
    }

    pub fn meta(&self) -> &Metadata {
        &self.meta
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn into_parts(self) -> (Metadata, Vec<LayerSpec>) {
        (self.meta, self.layers)
    }

    pub fn report(&self) -> &ShapeReport {
        &self.report
    }

    /// (channels, height, width, binarization threshold) of the input.
    pub fn input(&self) -> (usize, usize, usize, u8) {
        match self.layers[0] {
            LayerSpec::Input {
                channels,
                height,
                width,
                threshold,
            } => (channels, height, width, threshold),
            _ => unreachable!("validated graphs start with Input"),
        }
    }

    pub fn head(&self) -> Option<&FloatHead> {
        match self.layers.last() {
            Some(LayerSpec::Head(h)) => Some(h),
            _ => None,
        }
    }

    /// Layers up to, not including, the head.
    pub fn extractor(&self) -> &[LayerSpec] {
        match self.head() {
            Some(_) => &self.layers[..self.layers.len() - 1],
            None => &self.layers,
        }
    }

    /// Shape of what the extractor produces.
    pub fn feature_shape(&self) -> ActShape {
        match self.head() {
            Some(_) => self.report.layers.last().expect("head recorded").input,
            None => self.report.output,
        }
    }

    /// Length of the feature vector the head consumes, if the extractor ends
    /// in a feature stage (global average pool or a flattenable bit map).
    pub fn feature_len(&self) -> Option<usize> {
        let s = self.feature_shape();
        matches!(s.kind, ActKind::Features | ActKind::Bits).then(|| s.len())
    }

    /// Label for a class index, falling back to the index itself.
    pub fn label(&self, class: usize) -> String {
        self.meta
            .labels
            .get(class)
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }
}

/// Check the shape chain and structural rules, returning per-layer shapes or
/// an error naming the first offending layer.
pub fn validate(layers: &[LayerSpec]) -> Result<ShapeReport> {
    let first = layers
        .first()
        .ok_or_else(|| Error::graph(0, "graph is empty"))?;
    let LayerSpec::Input {
        channels,
        height,
        width,
        ..
    } = *first
    else {
        return Err(Error::graph(0, "first layer must be Input"));
    };
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::graph(0, "input dimensions must be positive"));
    }
    let input = bounded(ActShape::new(ActKind::Bits, channels, height, width), "0")?;
    let mut out = Vec::with_capacity(layers.len());
    out.push(LayerShape {
        path: "0".into(),
        kind: "input",
        input,
        output: input,
    });
    let shape = validate_seq(&layers[1..], input, "", 1, &mut out)?;
    if shape.kind == ActKind::Ints {
        return Err(Error::graph(
            layers.len() - 1,
            "integer pre-activations must be thresholded or globally pooled",
        ));
    }
    Ok(ShapeReport {
        layers: out,
        output: shape,
    })
}

fn validate_seq(
    layers: &[LayerSpec],
    mut cur: ActShape,
    prefix: &str,
    offset: usize,
    out: &mut Vec<LayerShape>,
) -> Result<ActShape> {
    let mut i = 0;
    while i < layers.len() {
        let path = format!("{prefix}{}", i + offset);
        let layer = &layers[i];
        let fail = |reason: String| Error::graph(&path, reason);
        let next = match layer {
            LayerSpec::Input { .. } => return Err(fail("Input may only appear first".into())),
            LayerSpec::BinConv(w) => {
                expect_kind(cur, ActKind::Bits, &path, "conv")?;
                if cur.channels != w.in_channels() {
                    return Err(fail(format!(
                        "conv expects {} channels, input has {}",
                        w.in_channels(),
                        cur.channels
                    )));
                }
                check_accumulator(w.fan_in(), &path)?;
                let (oh, ow) =
                    conv_output_dims((cur.height, cur.width), w.kernel(), w.stride(), w.pad())
                        .map_err(|e| fail(e.to_string()))?;
                if w.out_channels() == 0 {
                    return Err(fail("conv has no output channels".into()));
                }
                ActShape::new(ActKind::Ints, w.out_channels(), oh, ow)
            }
            LayerSpec::BinDense(w) => {
                expect_kind(cur, ActKind::Bits, &path, "dense")?;
                if cur.len() != w.cols() {
                    return Err(fail(format!(
                        "dense expects {} inputs, flattened input has {}",
                        w.cols(),
                        cur.len()
                    )));
                }
                check_accumulator(w.cols(), &path)?;
                if w.rows() == 0 {
                    return Err(fail("dense has no outputs".into()));
                }
                ActShape::new(ActKind::Ints, w.rows(), 1, 1)
            }
            LayerSpec::Threshold(t) => {
                expect_kind(cur, ActKind::Ints, &path, "threshold")?;
                if t.channels() != cur.channels {
                    return Err(fail(format!(
                        "threshold set has {} channels, input has {}",
                        t.channels(),
                        cur.channels
                    )));
                }
                ActShape {
                    kind: ActKind::Bits,
                    ..cur
                }
            }
            LayerSpec::MaxPool {
                kernel,
                stride,
                pad,
            } => {
                if !matches!(cur.kind, ActKind::Bits | ActKind::Ints) {
                    return Err(fail(format!("maxpool needs a spatial map, got {cur}")));
                }
                let (oh, ow) = pool_output_dims((cur.height, cur.width), *kernel, *stride, *pad)
                    .map_err(|e| fail(e.to_string()))?;
                ActShape {
                    height: oh,
                    width: ow,
                    ..cur
                }
            }
            LayerSpec::GlobalAvgPool => {
                if !matches!(cur.kind, ActKind::Bits | ActKind::Ints) {
                    return Err(fail(format!("avgpool needs a spatial map, got {cur}")));
                }
                if cur.kind == ActKind::Ints
                    && !matches!(layers.get(i + 1), None | Some(LayerSpec::Head(_)))
                {
                    return Err(fail(
                        "pooled integer pre-activations may only feed the head".into(),
                    ));
                }
                ActShape::vector(ActKind::Features, cur.channels)
            }
            LayerSpec::Branches(branches) => {
                if !matches!(layers.get(i + 1), Some(LayerSpec::Concat)) {
                    return Err(fail(
                        "Branches must be immediately followed by Concat".into(),
                    ));
                }
                expect_kind(cur, ActKind::Bits, &path, "branches")?;
                if branches.is_empty() {
                    return Err(fail("Branches needs at least one branch".into()));
                }
                let mut channels: usize = 0;
                let mut spatial = None;
                for (b, seq) in branches.iter().enumerate() {
                    if seq.is_empty() {
                        return Err(fail(format!("branch {b} is empty")));
                    }
                    let s = validate_seq(seq, cur, &format!("{path}.{b}."), 0, out)?;
                    if s.kind != ActKind::Bits {
                        return Err(fail(format!("branch {b} must end in bits, ends in {s}")));
                    }
                    match spatial {
                        None => spatial = Some((s.height, s.width)),
                        Some(hw) if hw != (s.height, s.width) => {
                            return Err(fail(format!(
                                "branch {b} is {}x{}, earlier branches are {}x{}",
                                s.height, s.width, hw.0, hw.1
                            )))
                        }
                        _ => {}
                    }
                    channels = channels.saturating_add(s.channels);
                }
                let (h, w) = spatial.expect("at least one branch");
                let concat = bounded(ActShape::new(ActKind::Bits, channels, h, w), &path)?;
                out.push(LayerShape {
                    path: path.clone(),
                    kind: "branches",
                    input: cur,
                    output: concat,
                });
                // the Concat consumes nothing further; record it as identity
                let cpath = format!("{prefix}{}", i + 1 + offset);
                out.push(LayerShape {
                    path: cpath,
                    kind: "concat",
                    input: concat,
                    output: concat,
                });
                cur = concat;
                i += 2;
                continue;
            }
            LayerSpec::Concat => return Err(fail("Concat without preceding Branches".into())),
            LayerSpec::Head(h) => {
                if i + 1 != layers.len() || !prefix.is_empty() {
                    return Err(fail("Head must be the last top-level layer".into()));
                }
                if !matches!(cur.kind, ActKind::Features | ActKind::Bits) {
                    return Err(fail(format!("head needs features, got {cur}")));
                }
                if h.features() != cur.len() {
                    return Err(fail(format!(
                        "head expects {} features, extractor yields {}",
                        h.features(),
                        cur.len()
                    )));
                }
                if h.classes() == 0 {
                    return Err(fail("head has no classes".into()));
                }
                ActShape::vector(ActKind::Probabilities, h.classes())
            }
        };
        let next = bounded(next, &path)?;
        out.push(LayerShape {
            path,
            kind: layer.kind(),
            input: cur,
            output: next,
        });
        cur = next;
        i += 1;
    }
    Ok(cur)
}

fn expect_kind(cur: ActShape, want: ActKind, path: &str, what: &str) -> Result<()> {
    if cur.kind != want {
        return Err(Error::graph(
            path,
            format!("{what} needs {want:?} input, got {cur}"),
        ));
    }
    Ok(())
}

/// Largest activation the executor will allocate.
const MAX_ACTIVATION: usize = i32::MAX as usize;

fn bounded(shape: ActShape, path: &str) -> Result<ActShape> {
    match shape
        .channels
        .checked_mul(shape.height)
        .and_then(|v| v.checked_mul(shape.width))
    {
        Some(n) if n <= MAX_ACTIVATION => Ok(shape),
        _ => Err(Error::graph(
            path,
            format!(
                "activation {}x{}x{} is too large",
                shape.channels, shape.height, shape.width
            ),
        )),
    }
}

fn check_accumulator(fan_in: usize, path: &str) -> Result<()> {
    if fan_in >= i32::MAX as usize {
        return Err(Error::graph(
            path,
            format!("fan-in {fan_in} overflows 32-bit accumulators"),
        ));
    }
    Ok(())
}
