//! BNNM model files (version 1, little-endian, no padding).
//!
//! ```text
//! "BNNM" | u16 version | u16 layer count
//! u32 name length | name (UTF-8) | u32 label count | { u32 length | label }*
//! layer*                                  (see below)
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Each layer is a `u8` tag followed by its fields:
//!
//! | tag | layer         | fields                                                                    |
//! |-----|---------------|---------------------------------------------------------------------------|
//! | 0   | Input         | u32 c, u32 h, u32 w, u8 threshold                                         |
//! | 1   | BinConv       | u32 out, in, kh, kw, stride, pad; per filter: u32 nwords, u64 words       |
//! | 2   | BinDense      | u32 rows, cols; per row: u32 nwords, u64 words, u8 has_mask, [u32 nwords, u64 words] |
//! | 3   | Threshold     | u32 channels, i32 thresholds[channels], u8 flips[channels]                |
//! | 4   | MaxPool       | u32 kernel, stride, pad                                                   |
//! | 5   | GlobalAvgPool | –                                                                         |
//! | 6   | Branches      | u32 branch count; per branch: u32 layer count, layers                     |
//! | 7   | Concat        | –                                                                         |
//! | 8   | Head          | u32 classes, features, f32 weights[classes·features], f32 bias[classes]   |
//!
//! Weight words are LSB-first packed bits, pad bits zero.

use std::fs;
use std::path::Path;

use super::{LayerSpec, Metadata, ModelGraph};
use crate::binlayer::{BinConvWeights, BinDenseWeights, FloatHead, Threshold, ThresholdSet};
use crate::bitpack::{words_for, BitVector, PruneMask};
use crate::error::{Error, ModelFormatError, Result};

pub const MAGIC: [u8; 4] = *b"BNNM";
pub const FORMAT_VERSION: u16 = 1;

const MAX_NESTING: usize = 16;

mod tag {
    pub const INPUT: u8 = 0;
    pub const CONV: u8 = 1;
    pub const DENSE: u8 = 2;
    pub const THRESHOLD: u8 = 3;
    pub const MAXPOOL: u8 = 4;
    pub const AVGPOOL: u8 = 5;
    pub const BRANCHES: u8 = 6;
    pub const CONCAT: u8 = 7;
    pub const HEAD: u8 = 8;
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| {
            Error::invalid(format!("{v} does not fit the model format's u32 fields"))
        })?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn words(&mut self, words: &[u64]) -> Result<()> {
        self.u32(words.len())?;
        for w in words {
            self.buf.extend_from_slice(&w.to_le_bytes());
        }
        Ok(())
    }

    fn layers(&mut self, layers: &[LayerSpec]) -> Result<()> {
        for l in layers {
            self.layer(l)?;
        }
        Ok(())
    }

    fn layer(&mut self, layer: &LayerSpec) -> Result<()> {
        match layer {
            LayerSpec::Input {
                channels,
                height,
                width,
                threshold,
            } => {
                self.u8(tag::INPUT);
                self.u32(*channels)?;
                self.u32(*height)?;
                self.u32(*width)?;
                self.u8(*threshold);
            }
            LayerSpec::BinConv(w) => {
                self.u8(tag::CONV);
                let (kh, kw) = w.kernel();
                for v in [
                    w.out_channels(),
                    w.in_channels(),
                    kh,
                    kw,
                    w.stride(),
                    w.pad(),
                ] {
                    self.u32(v)?;
                }
                for f in w.filters() {
                    self.words(f.words())?;
                }
            }
            LayerSpec::BinDense(w) => {
                self.u8(tag::DENSE);
                self.u32(w.rows())?;
                self.u32(w.cols())?;
                for r in 0..w.rows() {
                    self.words(w.row(r).words())?;
                    match w.mask(r) {
                        Some(m) => {
                            self.u8(1);
                            self.words(m.words())?;
                        }
                        None => self.u8(0),
                    }
                }
            }
            LayerSpec::Threshold(t) => {
                self.u8(tag::THRESHOLD);
                self.u32(t.channels())?;
                for e in t.entries() {
                    self.i32(e.threshold);
                }
                for e in t.entries() {
                    self.u8(e.flip as u8);
                }
            }
            LayerSpec::MaxPool {
                kernel,
                stride,
                pad,
            } => {
                self.u8(tag::MAXPOOL);
                self.u32(*kernel)?;
                self.u32(*stride)?;
                self.u32(*pad)?;
            }
            LayerSpec::GlobalAvgPool => self.u8(tag::AVGPOOL),
            LayerSpec::Branches(branches) => {
                self.u8(tag::BRANCHES);
                self.u32(branches.len())?;
                for b in branches {
                    self.u32(b.len())?;
                    self.layers(b)?;
                }
            }
            LayerSpec::Concat => self.u8(tag::CONCAT),
            LayerSpec::Head(h) => {
                self.u8(tag::HEAD);
                self.u32(h.classes())?;
                self.u32(h.features())?;
                for &v in h.weights() {
                    self.f32(v);
                }
                for &v in h.bias() {
                    self.f32(v);
                }
            }
        }
        Ok(())
    }
}

pub fn encode_model(graph: &ModelGraph) -> Result<Vec<u8>> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(&MAGIC);
    w.u16(FORMAT_VERSION);
    let count = u16::try_from(graph.layers().len())
        .map_err(|_| Error::invalid("more than 65535 top-level layers"))?;
    w.u16(count);
    w.str(&graph.meta().name)?;
    w.u32(graph.meta().labels.len())?;
    for l in &graph.meta().labels {
        w.str(l)?;
    }
    w.layers(graph.layers())?;
    let crc = crc32fast::hash(&w.buf);
    w.buf.extend_from_slice(&crc.to_le_bytes());
    Ok(w.buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type FmtResult<T> = std::result::Result<T, ModelFormatError>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> FmtResult<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(ModelFormatError::Truncated {
                offset: self.buf.len(),
                needed: n - remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self) -> FmtResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> FmtResult<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> FmtResult<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn i32(&mut self) -> FmtResult<i32> {
        let b = self.take(4)?;
        Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> FmtResult<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Ensure `count` items of `size` bytes can still be read before
    /// allocating room for them.
    fn reserve(&self, count: usize, size: usize) -> FmtResult<()> {
        match count.checked_mul(size) {
            Some(n) if n <= self.remaining() => Ok(()),
            Some(n) => Err(ModelFormatError::Truncated {
                offset: self.buf.len(),
                needed: n - self.remaining(),
            }),
            None => Err(ModelFormatError::Malformed(format!(
                "count {count} overflows"
            ))),
        }
    }

    fn str(&mut self) -> FmtResult<String> {
        let n = self.u32()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| ModelFormatError::Malformed("metadata string is not UTF-8".into()))
    }

    fn bits(&mut self, len: usize) -> FmtResult<Vec<u64>> {
        let n = self.u32()?;
        if n != words_for(len) {
            return Err(ModelFormatError::Malformed(format!(
                "{n} words recorded for {len} bits"
            )));
        }
        self.reserve(n, 8)?;
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn layers(&mut self, count: usize, depth: usize) -> Result<Vec<LayerSpec>> {
        self.reserve(count, 1)?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.layer(depth)?);
        }
        Ok(out)
    }

    fn layer(&mut self, depth: usize) -> Result<LayerSpec> {
        let malformed = |m: String| Error::from(ModelFormatError::Malformed(m));
        let t = self.u8()?;
        Ok(match t {
            tag::INPUT => LayerSpec::Input {
                channels: self.u32()?,
                height: self.u32()?,
                width: self.u32()?,
                threshold: self.u8()?,
            },
            tag::CONV => {
                let [out, inc, kh, kw, stride, pad] = [
                    self.u32()?,
                    self.u32()?,
                    self.u32()?,
                    self.u32()?,
                    self.u32()?,
                    self.u32()?,
                ];
                let fan_in = inc
                    .checked_mul(kh)
                    .and_then(|v| v.checked_mul(kw))
                    .filter(|&v| v < i32::MAX as usize)
                    .ok_or_else(|| malformed(format!("conv fan-in {inc}x{kh}x{kw} too large")))?;
                self.reserve(out, 4)?;
                let mut filters = Vec::with_capacity(out);
                for _ in 0..out {
                    filters.push(
                        BitVector::from_words(self.bits(fan_in)?, fan_in)
                            .map_err(|e| malformed(e.to_string()))?,
                    );
                }
                LayerSpec::BinConv(
                    BinConvWeights::new(inc, (kh, kw), stride, pad, filters)
                        .map_err(|e| malformed(e.to_string()))?,
                )
            }
            tag::DENSE => {
                let rows = self.u32()?;
                let cols = self.u32()?;
                self.reserve(rows, 5)?;
                let mut weights = Vec::with_capacity(rows);
                let mut masks = Vec::with_capacity(rows);
                for _ in 0..rows {
                    weights.push(
                        BitVector::from_words(self.bits(cols)?, cols)
                            .map_err(|e| malformed(e.to_string()))?,
                    );
                    masks.push(match self.u8()? {
                        0 => None,
                        1 => Some(
                            PruneMask::from_words(self.bits(cols)?, cols)
                                .map_err(|e| malformed(e.to_string()))?,
                        ),
                        f => return Err(malformed(format!("mask flag {f}"))),
                    });
                }
                LayerSpec::BinDense(
                    BinDenseWeights::with_masks(cols, weights, masks)
                        .map_err(|e| malformed(e.to_string()))?,
                )
            }
            tag::THRESHOLD => {
                let n = self.u32()?;
                self.reserve(n, 5)?;
                let thresholds = (0..n).map(|_| self.i32()).collect::<FmtResult<Vec<_>>>()?;
                let mut entries = Vec::with_capacity(n);
                for threshold in thresholds {
                    let flip = match self.u8()? {
                        0 => false,
                        1 => true,
                        f => return Err(malformed(format!("flip flag {f}"))),
                    };
                    entries.push(Threshold { threshold, flip });
                }
                LayerSpec::Threshold(ThresholdSet::new(entries))
            }
            tag::MAXPOOL => LayerSpec::MaxPool {
                kernel: self.u32()?,
                stride: self.u32()?,
                pad: self.u32()?,
            },
            tag::AVGPOOL => LayerSpec::GlobalAvgPool,
            tag::BRANCHES => {
                if depth >= MAX_NESTING {
                    return Err(malformed("branches nested too deeply".into()));
                }
                let n = self.u32()?;
                self.reserve(n, 4)?;
                let mut branches = Vec::with_capacity(n);
                for _ in 0..n {
                    let count = self.u32()?;
                    branches.push(self.layers(count, depth + 1)?);
                }
                LayerSpec::Branches(branches)
            }
            tag::CONCAT => LayerSpec::Concat,
            tag::HEAD => {
                let classes = self.u32()?;
                let features = self.u32()?;
                let nweights = classes
                    .checked_mul(features)
                    .ok_or_else(|| malformed("head size overflows".into()))?;
                self.reserve(nweights.saturating_add(classes), 4)?;
                let weights = (0..nweights)
                    .map(|_| self.f32())
                    .collect::<FmtResult<Vec<_>>>()?;
                let bias = (0..classes)
                    .map(|_| self.f32())
                    .collect::<FmtResult<Vec<_>>>()?;
                LayerSpec::Head(
                    FloatHead::new(classes, features, weights, bias)
                        .map_err(|e| malformed(e.to_string()))?,
                )
            }
            other => return Err(malformed(format!("unknown layer tag {other}"))),
        })
    }
}

fn parse_body(body: &[u8]) -> Result<(Metadata, Vec<LayerSpec>, usize)> {
    let mut r = Reader { buf: body, pos: 6 };
    let count = r.u16()? as usize;
    let name = r.str()?;
    let nlabels = r.u32()?;
    r.reserve(nlabels, 4)?;
    let labels = (0..nlabels)
        .map(|_| r.str())
        .collect::<FmtResult<Vec<_>>>()?;
    let layers = r.layers(count, 0)?;
    Ok((Metadata { name, labels }, layers, r.pos))
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelGraph> {
    let truncated = |needed| ModelFormatError::Truncated {
        offset: bytes.len(),
        needed,
    };
    if bytes.len() < 4 {
        return Err(truncated(4 - bytes.len()).into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(ModelFormatError::BadMagic(magic).into());
    }
    if bytes.len() < 6 {
        return Err(truncated(6 - bytes.len()).into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(ModelFormatError::UnsupportedVersion(version).into());
    }
    if bytes.len() < 12 {
        return Err(truncated(12 - bytes.len()).into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    let checksum = || ModelFormatError::ChecksumMismatch { stored, computed };

    let (meta, layers, used) = match parse_body(body) {
        Ok(parsed) => parsed,
        // running out of bytes means the file was cut short; any other
        // structural failure on a file whose checksum fails is corruption
        Err(e @ Error::Model(ModelFormatError::Truncated { .. })) => return Err(e),
        Err(e) => {
            return Err(if stored != computed {
                checksum().into()
            } else {
                e
            })
        }
    };
    if stored != computed {
        return Err(checksum().into());
    }
    if used != body.len() {
        return Err(ModelFormatError::Malformed(format!(
            "{} unexpected bytes after the last layer",
            body.len() - used
        ))
        .into());
    }
    ModelGraph::new(meta, layers)
}

pub fn save_model(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(graph)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    decode_model(&fs::read(path)?)
}
