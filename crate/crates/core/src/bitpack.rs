//! Packed ±1 vectors and the XNOR-popcount dot product.
//!
//! Element `i` lives in bit `i % 64` of word `i / 64` (LSB-first). A set bit
//! encodes +1, a clear bit −1. Bits at positions `>= len` are always zero.

use crate::error::{Error, Result};

pub const WORD_BITS: usize = 64;

#[inline]
pub fn words_for(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

/// Mask of valid bits in the last word of a `len`-element vector.
#[inline]
fn tail_mask(len: usize) -> u64 {
    match len % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Binarize a real: +1 for `x >= 0`, −1 otherwise.
pub fn binarize_scalar(x: f64) -> Result<i8> {
    if !x.is_finite() {
        return Err(Error::invalid(format!(
            "cannot binarize non-finite value {x}"
        )));
    }
    Ok(if x >= 0.0 { 1 } else { -1 })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
}

impl BitVector {
    /// All −1.
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; words_for(len)],
            len,
        }
    }

    /// All +1.
    pub fn ones(len: usize) -> Self {
        let mut v = Self {
            words: vec![u64::MAX; words_for(len)],
            len,
        };
        v.clear_pad();
        v
    }

    pub fn pack(values: &[i8]) -> Result<Self> {
        let mut v = Self::zeros(values.len());
        for (i, &x) in values.iter().enumerate() {
            match x {
                1 => v.words[i / WORD_BITS] |= 1 << (i % WORD_BITS),
                -1 => {}
                other => {
                    return Err(Error::invalid(format!(
                        "element {i} is {other}, expected -1 or +1"
                    )))
                }
            }
        }
        Ok(v)
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % WORD_BITS == 0 {
                words.push(0);
            }
            if b {
                words[len / WORD_BITS] |= 1 << (len % WORD_BITS);
            }
            len += 1;
        }
        Self { words, len }
    }

    /// Build from raw words; rejects wrong word counts and dirty pad bits.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if words.len() != words_for(len) {
            return Err(Error::dim(format!(
                "{} words cannot hold exactly {len} bits",
                words.len()
            )));
        }
        if let Some(&last) = words.last() {
            if last & !tail_mask(len) != 0 {
                return Err(Error::invalid("pad bits beyond len must be zero"));
            }
        }
        Ok(Self { words, len })
    }

    pub fn unpack(&self) -> Vec<i8> {
        (0..self.len)
            .map(|i| if self.get(i) { 1 } else { -1 })
            .collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// True when element `i` is +1.
    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, plus_one: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let bit = 1u64 << (i % WORD_BITS);
        if plus_one {
            self.words[i / WORD_BITS] |= bit;
        } else {
            self.words[i / WORD_BITS] &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Elementwise negation.
    pub fn negated(&self) -> Self {
        let mut v = Self {
            words: self.words.iter().map(|w| !w).collect(),
            len: self.len,
        };
        v.clear_pad();
        v
    }

    fn clear_pad(&mut self) {
        if let Some(last) = self.words.last_mut() {
            *last &= tail_mask(self.len);
        }
    }
}

/// Per-synapse keep mask; a clear bit forces that weight to zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PruneMask {
    words: Vec<u64>,
    len: usize,
    active: usize,
}

impl PruneMask {
    pub fn from_bools(keep: impl IntoIterator<Item = bool>) -> Self {
        let bits = BitVector::from_bools(keep);
        Self::from(bits)
    }

    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        BitVector::from_words(words, len).map(Self::from)
    }

    pub fn full(len: usize) -> Self {
        Self::from(BitVector::ones(len))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn keeps(&self, i: usize) -> bool {
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }
}

impl From<BitVector> for PruneMask {
    fn from(bits: BitVector) -> Self {
        let active = bits.count_ones();
        Self {
            words: bits.words,
            len: bits.len,
            active,
        }
    }
}

/// Count of positions where `a` and `b` agree, restricted to the low `len`
/// bits. Slices must have equal length.
#[inline]
pub(crate) fn matches(a: &[u64], b: &[u64], len: usize) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    let Some(last) = a.len().checked_sub(1) else {
        return 0;
    };
    let mut n = 0u32;
    for i in 0..last {
        n += (!(a[i] ^ b[i])).count_ones();
    }
    n + (!(a[last] ^ b[last]) & tail_mask(len)).count_ones()
}

/// Integer dot product of two ±1 vectors: `2·matches − n`. With a mask only
/// kept positions contribute: `2·matches_kept − active`.
pub fn xnor_popcount_dot(a: &BitVector, b: &BitVector, mask: Option<&PruneMask>) -> Result<i32> {
    if a.len != b.len {
        return Err(Error::dim(format!(
            "dot product of lengths {} and {}",
            a.len, b.len
        )));
    }
    match mask {
        None => Ok(2 * matches(&a.words, &b.words, a.len) as i32 - a.len as i32),
        Some(m) => {
            if m.len != a.len {
                return Err(Error::dim(format!(
                    "mask length {} does not match vector length {}",
                    m.len, a.len
                )));
            }
            let kept: u32 = a
                .words
                .iter()
                .zip(&b.words)
                .zip(&m.words)
                .map(|((x, y), k)| (!(x ^ y) & k).count_ones())
                .sum();
            Ok(2 * kept as i32 - m.active as i32)
        }
    }
}

/// Channel-major (c, h, w) tensor of ±1 values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitTensor {
    data: BitVector,
    channels: usize,
    height: usize,
    width: usize,
}

impl BitTensor {
    pub fn new(data: BitVector, channels: usize, height: usize, width: usize) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "{} bits cannot form a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self {
            data,
            channels,
            height,
            width,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: BitVector::zeros(channels * height * width),
            channels,
            height,
            width,
        }
    }

    pub fn ones(channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: BitVector::ones(channels * height * width),
            channels,
            height,
            width,
        }
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> bool {
        self.data.get(self.index(c, y, x))
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, plus_one: bool) {
        let i = self.index(c, y, x);
        self.data.set(i, plus_one);
    }

    pub fn bits(&self) -> &BitVector {
        &self.data
    }

    pub fn into_bits(self) -> BitVector {
        self.data
    }

    /// Values as ±1 reals in storage order.
    pub fn to_signs(&self) -> Vec<f64> {
        self.data.unpack().into_iter().map(f64::from).collect()
    }
}
