//! Float manifest → binarized [`ModelGraph`].
//!
//! The manifest is TOML (grammar and examples in `docs/manifest-format.md`).
//! Real conv/dense weights are sign-binarized, every batch-norm + sign pair
//! is folded into integer thresholds, and a dense layer in final top-level
//! position keeps its real weights as the classification head.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Metadata, ModelGraph, DEFAULT_INPUT_THRESHOLD};
use crate::binlayer::{
    fold_bn_sign, BNParams, BinConvWeights, BinDenseWeights, FloatHead, ThresholdSet,
};
use crate::bitpack::{binarize_scalar, BitVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloatModelManifest {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub labels: Vec<String>,
    pub input: InputEntry,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputEntry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_threshold")]
    pub threshold: u8,
}

fn default_threshold() -> u8 {
    DEFAULT_INPUT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerEntry {
    Conv(ConvEntry),
    Dense(DenseEntry),
    Batchnorm(BatchNormEntry),
    Sign,
    Maxpool(PoolEntry),
    GlobalAvgpool,
    Branches(BranchesEntry),
    Concat,
}

impl LayerEntry {
    fn name(&self) -> &'static str {
        match self {
            LayerEntry::Conv(_) => "conv",
            LayerEntry::Dense(_) => "dense",
            LayerEntry::Batchnorm(_) => "batchnorm",
            LayerEntry::Sign => "sign",
            LayerEntry::Maxpool(_) => "maxpool",
            LayerEntry::GlobalAvgpool => "global_avgpool",
            LayerEntry::Branches(_) => "branches",
            LayerEntry::Concat => "concat",
        }
    }
}

/// `3` or `[3, 5]` (height, width).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSize {
    Square(usize),
    Rect([usize; 2]),
}

impl KernelSize {
    pub fn dims(self) -> (usize, usize) {
        match self {
            KernelSize::Square(k) => (k, k),
            KernelSize::Rect([h, w]) => (h, w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvEntry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: KernelSize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    /// One row per filter, each flattened in (in_channel, ky, kx) order.
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseEntry {
    pub in_features: usize,
    pub out_features: usize,
    /// One row per output, over the channel-major flattened input.
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNormEntry {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchesEntry {
    pub branches: Vec<BranchEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchEntry {
    pub layers: Vec<LayerEntry>,
}

impl FloatModelManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn to_graph(&self) -> Result<ModelGraph> {
        let i = &self.input;
        let mut layers = vec![LayerSpec::Input {
            channels: i.channels,
            height: i.height,
            width: i.width,
            threshold: i.threshold,
        }];
        layers.extend(lower_seq(&self.layers, "", true)?);
        ModelGraph::new(
            Metadata {
                name: self.name.clone(),
                labels: self.labels.clone(),
            },
            layers,
        )
    }
}

/// Convert a manifest file.
pub fn convert(path: impl AsRef<Path>) -> Result<ModelGraph> {
    convert_str(&fs::read_to_string(path)?)
}

pub fn convert_str(text: &str) -> Result<ModelGraph> {
    FloatModelManifest::parse(text)?.to_graph()
}

fn bad(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Manifest(format!("layers[{path}]: {msg}"))
}

fn check_rows(path: &str, rows: &[Vec<f64>], count: usize, len: usize) -> Result<()> {
    if rows.len() != count {
        return Err(bad(
            path,
            format!("expected {count} weight rows, found {}", rows.len()),
        ));
    }
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != len) {
        return Err(bad(
            path,
            format!("weight row {r} has {} values, expected {len}", row.len()),
        ));
    }
    Ok(())
}

fn binarize_row(path: &str, row: &[f64]) -> Result<BitVector> {
    let signs = row
        .iter()
        .map(|&x| binarize_scalar(x))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| bad(path, e))?;
    BitVector::pack(&signs)
}

fn lower_seq(entries: &[LayerEntry], prefix: &str, top_level: bool) -> Result<Vec<LayerSpec>> {
    let mut out = Vec::with_capacity(entries.len());
    let mut i = 0;
    while i < entries.len() {
        let path = format!("{prefix}{i}");
        // (channels, fan-in) of a binary producer awaiting its activation
        let producer = match &entries[i] {
            LayerEntry::Conv(c) => {
                if c.bias.is_some() {
                    return Err(bad(
                        &path,
                        "binary conv layers take no bias; fold it into batchnorm",
                    ));
                }
                let (kh, kw) = c.kernel.dims();
                let fan_in = c
                    .in_channels
                    .checked_mul(kh)
                    .and_then(|v| v.checked_mul(kw))
                    .ok_or_else(|| bad(&path, "kernel too large"))?;
                check_rows(&path, &c.weights, c.out_channels, fan_in)?;
                let filters = c
                    .weights
                    .iter()
                    .map(|row| binarize_row(&path, row))
                    .collect::<Result<Vec<_>>>()?;
                let w = BinConvWeights::new(c.in_channels, (kh, kw), c.stride, c.pad, filters)
                    .map_err(|e| bad(&path, e))?;
                out.push(LayerSpec::BinConv(w));
                Some((c.out_channels, fan_in))
            }
            LayerEntry::Dense(d) => {
                check_rows(&path, &d.weights, d.out_features, d.in_features)?;
                if top_level && i + 1 == entries.len() {
                    let bias = d.bias.clone().unwrap_or_else(|| vec![0.0; d.out_features]);
                    if bias.len() != d.out_features {
                        return Err(bad(
                            &path,
                            format!(
                                "bias has {} values, expected {}",
                                bias.len(),
                                d.out_features
                            ),
                        ));
                    }
                    let weights = d.weights.iter().flatten().map(|&x| x as f32).collect();
                    let bias = bias.iter().map(|&x| x as f32).collect();
                    let head = FloatHead::new(d.out_features, d.in_features, weights, bias)
                        .map_err(|e| bad(&path, e))?;
                    out.push(LayerSpec::Head(head));
                    None
                } else {
                    if d.bias.is_some() {
                        return Err(bad(
                            &path,
                            "only the final dense layer (the head) may carry a bias",
                        ));
                    }
                    let rows = d
                        .weights
                        .iter()
                        .map(|row| binarize_row(&path, row))
                        .collect::<Result<Vec<_>>>()?;
                    out.push(LayerSpec::BinDense(
                        BinDenseWeights::new(d.in_features, rows).map_err(|e| bad(&path, e))?,
                    ));
                    Some((d.out_features, d.in_features))
                }
            }
            LayerEntry::Batchnorm(_) => {
                return Err(bad(
                    &path,
                    "batchnorm must directly follow a conv or dense layer",
                ))
            }
            LayerEntry::Sign => {
                return Err(bad(
                    &path,
                    "sign must directly follow conv, dense or batchnorm",
                ))
            }
            LayerEntry::Maxpool(p) => {
                out.push(LayerSpec::MaxPool {
                    kernel: p.kernel,
                    stride: p.stride,
                    pad: p.pad,
                });
                None
            }
            LayerEntry::GlobalAvgpool => {
                out.push(LayerSpec::GlobalAvgPool);
                None
            }
            LayerEntry::Branches(b) => {
                let branches = b
                    .branches
                    .iter()
                    .enumerate()
                    .map(|(k, br)| lower_seq(&br.layers, &format!("{path}.{k}."), false))
                    .collect::<Result<Vec<_>>>()?;
                out.push(LayerSpec::Branches(branches));
                None
            }
            LayerEntry::Concat => {
                out.push(LayerSpec::Concat);
                None
            }
        };
        i += 1;

        let Some((channels, fan_in)) = producer else {
            continue;
        };
        match entries.get(i) {
            Some(LayerEntry::Batchnorm(bn)) => {
                let bpath = format!("{prefix}{i}");
                if bn.gamma.len() != channels {
                    return Err(bad(
                        &bpath,
                        format!(
                            "batchnorm has {} channels, producer has {channels}",
                            bn.gamma.len()
                        ),
                    ));
                }
                match entries.get(i + 1) {
                    Some(LayerEntry::Sign) => {}
                    other => {
                        return Err(bad(
                            &bpath,
                            format!(
                                "batchnorm must be followed by sign, found {}",
                                other.map_or("end of layers", LayerEntry::name)
                            ),
                        ))
                    }
                }
                let params = BNParams {
                    gamma: bn.gamma.clone(),
                    beta: bn.beta.clone(),
                    mean: bn.mean.clone(),
                    var: bn.var.clone(),
                    eps: bn.eps,
                };
                let t = fold_bn_sign(&params, fan_in).map_err(|e| match e {
                    e @ Error::SingularParameter { .. } => e,
                    e => bad(&bpath, e),
                })?;
                out.push(LayerSpec::Threshold(t));
                i += 2;
            }
            Some(LayerEntry::Sign) => {
                out.push(LayerSpec::Threshold(ThresholdSet::sign(channels)));
                i += 1;
            }
            _ => {}
        }
    }
    Ok(out)
}
