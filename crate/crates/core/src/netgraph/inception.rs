//! Inception modules and GoogLeNet-shaped presets.
//!
//! Presets carry random ±1 weights with plain sign thresholds. They are
//! frozen feature extractors for transfer learning and throughput studies,
//! not trained networks.

use super::{LayerSpec, Metadata, ModelGraph, DEFAULT_INPUT_THRESHOLD};
use crate::binlayer::{BinConvWeights, BinDenseWeights, FloatHead, ThresholdSet};
use crate::bitpack::{words_for, BitVector};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Channel widths of one inception module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionWidths {
    pub b1: usize,
    pub b3_reduce: usize,
    pub b3: usize,
    pub b5_reduce: usize,
    pub b5: usize,
    pub pool_proj: usize,
}

impl InceptionWidths {
    pub fn new(
        b1: usize,
        b3_reduce: usize,
        b3: usize,
        b5_reduce: usize,
        b5: usize,
        pool_proj: usize,
    ) -> Result<Self> {
        let w = Self {
            b1,
            b3_reduce,
            b3,
            b5_reduce,
            b5,
            pool_proj,
        };
        if w.as_array().contains(&0) {
            return Err(Error::invalid(format!(
                "inception widths must be positive: {w:?}"
            )));
        }
        Ok(w)
    }

    fn as_array(&self) -> [usize; 6] {
        [
            self.b1,
            self.b3_reduce,
            self.b3,
            self.b5_reduce,
            self.b5,
            self.pool_proj,
        ]
    }

    pub fn out_channels(&self) -> usize {
        self.b1 + self.b3 + self.b5 + self.pool_proj
    }

    /// Every width divided by `divisor`, rounded up.
    pub fn scaled(&self, divisor: usize) -> Self {
        let s = |v: usize| v.div_ceil(divisor).max(1);
        Self {
            b1: s(self.b1),
            b3_reduce: s(self.b3_reduce),
            b3: s(self.b3),
            b5_reduce: s(self.b5_reduce),
            b5: s(self.b5),
            pool_proj: s(self.pool_proj),
        }
    }
}

const fn widths(
    b1: usize,
    b3r: usize,
    b3: usize,
    b5r: usize,
    b5: usize,
    pp: usize,
) -> InceptionWidths {
    InceptionWidths {
        b1,
        b3_reduce: b3r,
        b3,
        b5_reduce: b5r,
        b5,
        pool_proj: pp,
    }
}

/// Module widths of the 22-layer GoogLeNet (3a–5b). These are the usual
/// published widths of that architecture, used here as builder defaults.
pub const GOOGLENET_WIDTHS: [(&str, InceptionWidths); 9] = [
    ("3a", widths(64, 96, 128, 16, 32, 32)),
    ("3b", widths(128, 128, 192, 32, 96, 64)),
    ("4a", widths(192, 96, 208, 16, 48, 64)),
    ("4b", widths(160, 112, 224, 24, 64, 64)),
    ("4c", widths(128, 128, 256, 24, 64, 64)),
    ("4d", widths(112, 144, 288, 32, 64, 64)),
    ("4e", widths(256, 160, 320, 32, 128, 128)),
    ("5a", widths(256, 160, 320, 32, 128, 128)),
    ("5b", widths(384, 192, 384, 48, 128, 128)),
];

fn random_bits(len: usize, rng: &mut SplitMix64) -> BitVector {
    let mut words: Vec<u64> = (0..words_for(len)).map(|_| rng.next_u64()).collect();
    if let Some(last) = words.last_mut() {
        if !len.is_multiple_of(64) {
            *last &= (1u64 << (len % 64)) - 1;
        }
    }
    BitVector::from_words(words, len).expect("pad bits cleared")
}

/// Conv layer with uniformly random ±1 filters.
pub fn random_conv(
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    rng: &mut SplitMix64,
) -> Result<LayerSpec> {
    let fan_in = in_channels * kernel * kernel;
    let filters = (0..out_channels)
        .map(|_| random_bits(fan_in, rng))
        .collect();
    Ok(LayerSpec::BinConv(BinConvWeights::new(
        in_channels,
        (kernel, kernel),
        stride,
        pad,
        filters,
    )?))
}

/// Dense layer with uniformly random ±1 rows.
pub fn random_dense(cols: usize, rows: usize, rng: &mut SplitMix64) -> Result<LayerSpec> {
    let r = (0..rows).map(|_| random_bits(cols, rng)).collect();
    Ok(LayerSpec::BinDense(BinDenseWeights::new(cols, r)?))
}

fn conv_sign(
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    rng: &mut SplitMix64,
) -> Result<[LayerSpec; 2]> {
    Ok([
        random_conv(in_c, out_c, k, stride, pad, rng)?,
        LayerSpec::Threshold(ThresholdSet::sign(out_c)),
    ])
}

/// One inception module as `[Branches, Concat]`: a 1×1 branch, 1×1 → 3×3,
/// 1×1 → 5×5, and 3×3 max-pool → 1×1, all preserving spatial size.
pub fn inception_module(
    in_shape: (usize, usize, usize),
    widths: InceptionWidths,
    rng: &mut SplitMix64,
) -> Result<Vec<LayerSpec>> {
    let w = InceptionWidths::new(
        widths.b1,
        widths.b3_reduce,
        widths.b3,
        widths.b5_reduce,
        widths.b5,
        widths.pool_proj,
    )?;
    let (c, h, wd) = in_shape;
    if c == 0 || h == 0 || wd == 0 {
        return Err(Error::invalid(format!(
            "inception input shape must be positive: {in_shape:?}"
        )));
    }
    let b1 = conv_sign(c, w.b1, 1, 1, 0, rng)?.to_vec();
    let b3 = [
        conv_sign(c, w.b3_reduce, 1, 1, 0, rng)?,
        conv_sign(w.b3_reduce, w.b3, 3, 1, 1, rng)?,
    ]
    .concat();
    let b5 = [
        conv_sign(c, w.b5_reduce, 1, 1, 0, rng)?,
        conv_sign(w.b5_reduce, w.b5, 5, 1, 2, rng)?,
    ]
    .concat();
    let mut pool = vec![LayerSpec::MaxPool {
        kernel: 3,
        stride: 1,
        pad: 1,
    }];
    pool.extend(conv_sign(c, w.pool_proj, 1, 1, 0, rng)?);
    Ok(vec![
        LayerSpec::Branches(vec![b1, b3, b5, pool]),
        LayerSpec::Concat,
    ])
}

fn stack_inception(
    layers: &mut Vec<LayerSpec>,
    mut shape: (usize, usize, usize),
    divisor: usize,
    rng: &mut SplitMix64,
) -> Result<usize> {
    let pool = || LayerSpec::MaxPool {
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    let down = |n: usize| (n + 2 - 3) / 2 + 1;
    for (name, w) in GOOGLENET_WIDTHS {
        if name == "4a" || name == "5a" {
            layers.push(pool());
            shape = (shape.0, down(shape.1), down(shape.2));
        }
        let w = w.scaled(divisor);
        layers.extend(inception_module(shape, w, rng)?);
        shape.0 = w.out_channels();
    }
    layers.push(LayerSpec::GlobalAvgPool);
    Ok(shape.0)
}

/// Desk-scale GoogLeNet: a light stem (3×3 conv, pool, 1×1, 3×3, pool) for
/// small inputs such as 28×28 digits, then the nine inception modules at
/// 1/8 width, global average pooling and a zero head. 22 weight layers deep
/// along the longest path.
pub fn mini_googlenet(
    input: (usize, usize, usize),
    classes: usize,
    seed: u64,
) -> Result<ModelGraph> {
    let (c, h, w) = input;
    let mut rng = SplitMix64::new(seed);
    let mut layers = vec![LayerSpec::Input {
        channels: c,
        height: h,
        width: w,
        threshold: DEFAULT_INPUT_THRESHOLD,
    }];
    let pool2 = || LayerSpec::MaxPool {
        kernel: 2,
        stride: 2,
        pad: 0,
    };
    layers.extend(conv_sign(c, 8, 3, 1, 1, &mut rng)?);
    layers.push(pool2());
    layers.extend(conv_sign(8, 8, 1, 1, 0, &mut rng)?);
    layers.extend(conv_sign(8, 24, 3, 1, 1, &mut rng)?);
    layers.push(pool2());
    let features = stack_inception(&mut layers, (24, h / 4, w / 4), 8, &mut rng)?;
    layers.push(LayerSpec::Head(FloatHead::zeros(classes, features)));
    ModelGraph::new(
        Metadata {
            name: "mini-googlenet".into(),
            labels: Vec::new(),
        },
        layers,
    )
}

/// Full-width GoogLeNet topology on 3×224×224 input (random weights).
pub fn full_googlenet(classes: usize, seed: u64) -> Result<ModelGraph> {
    let mut rng = SplitMix64::new(seed);
    let mut layers = vec![LayerSpec::Input {
        channels: 3,
        height: 224,
        width: 224,
        threshold: DEFAULT_INPUT_THRESHOLD,
    }];
    let pool = || LayerSpec::MaxPool {
        kernel: 3,
        stride: 2,
        pad: 1,
    };
    layers.extend(conv_sign(3, 64, 7, 2, 3, &mut rng)?);
    layers.push(pool());
    layers.extend(conv_sign(64, 64, 1, 1, 0, &mut rng)?);
    layers.extend(conv_sign(64, 192, 3, 1, 1, &mut rng)?);
    layers.push(pool());
    let features = stack_inception(&mut layers, (192, 28, 28), 1, &mut rng)?;
    layers.push(LayerSpec::Head(FloatHead::zeros(classes, features)));
    ModelGraph::new(
        Metadata {
            name: "googlenet".into(),
            labels: Vec::new(),
        },
        layers,
    )
}
