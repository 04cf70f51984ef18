use super::IntTensor;
use crate::bitpack::{matches, words_for, BitTensor, BitVector, WORD_BITS};
use crate::error::{Error, Result};

/// Binary 2-D convolution weights.
///
/// Filters are stored in (in_channel, ky, kx) order, the same order the
/// input tensor uses, so a filter spanning the whole input is exactly a
/// dense row. At construction the filters are also repacked into one
/// word-aligned segment per kernel tap, which is what the kernel reads.
#[derive(Debug, Clone)]
pub struct BinConvWeights {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride: usize,
    pad: usize,
    filters: Vec<BitVector>,
    taps: Vec<u64>,
    tap_zeros: Vec<u32>,
}

impl PartialEq for BinConvWeights {
    fn eq(&self, other: &Self) -> bool {
        self.out_channels == other.out_channels
            && self.in_channels == other.in_channels
            && self.kernel_h == other.kernel_h
            && self.kernel_w == other.kernel_w
            && self.stride == other.stride
            && self.pad == other.pad
            && self.filters == other.filters
    }
}

impl Eq for BinConvWeights {}

impl BinConvWeights {
    pub fn new(
        in_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
        filters: Vec<BitVector>,
    ) -> Result<Self> {
        let (kernel_h, kernel_w) = kernel;
        if stride == 0 {
            return Err(Error::invalid("conv stride must be at least 1"));
        }
        if in_channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::invalid(format!(
                "conv needs positive channels and kernel, got {in_channels} channels, {kernel_h}x{kernel_w} kernel"
            )));
        }
        let fan_in = in_channels * kernel_h * kernel_w;
        for (oc, f) in filters.iter().enumerate() {
            if f.len() != fan_in {
                return Err(Error::dim(format!(
                    "filter {oc} has {} weights, expected {fan_in}",
                    f.len()
                )));
            }
        }

        let wpc = words_for(in_channels);
        let ntaps = kernel_h * kernel_w;
        let mut taps = vec![0u64; filters.len() * ntaps * wpc];
        let mut tap_zeros = vec![0u32; filters.len() * ntaps];
        for (oc, f) in filters.iter().enumerate() {
            for ic in 0..in_channels {
                for t in 0..ntaps {
                    if f.get(ic * ntaps + t) {
                        taps[(oc * ntaps + t) * wpc + ic / WORD_BITS] |= 1 << (ic % WORD_BITS);
                    }
                }
            }
            for t in 0..ntaps {
                let seg = &taps[(oc * ntaps + t) * wpc..(oc * ntaps + t + 1) * wpc];
                let ones: u32 = seg.iter().map(|w| w.count_ones()).sum();
                tap_zeros[oc * ntaps + t] = in_channels as u32 - ones;
            }
        }

        Ok(Self {
            out_channels: filters.len(),
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            pad,
            filters,
            taps,
            tap_zeros,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn filter(&self, oc: usize) -> &BitVector {
        &self.filters[oc]
    }

    pub fn filters(&self) -> &[BitVector] {
        &self.filters
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        conv_output_dims(
            (height, width),
            (self.kernel_h, self.kernel_w),
            self.stride,
            self.pad,
        )
    }
}

/// `floor((in + 2·pad − k) / stride) + 1` per axis; errors unless both are ≥ 1.
pub fn conv_output_dims(
    input: (usize, usize),
    kernel: (usize, usize),
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    let axis = |n: usize, k: usize| -> Option<usize> {
        (n + 2 * pad).checked_sub(k).map(|span| span / stride + 1)
    };
    match (axis(input.0, kernel.0), axis(input.1, kernel.1)) {
        (Some(h), Some(w)) if h >= 1 && w >= 1 && stride >= 1 => Ok((h, w)),
        _ => Err(Error::dim(format!(
            "non-positive output dims: {}x{} input, {}x{} kernel, stride {stride}, pad {pad}",
            input.0, input.1, kernel.0, kernel.1
        ))),
    }
}

/// Per-pixel channel vectors: pixel `p` occupies words `p*wpc .. (p+1)*wpc`.
fn pixel_major(input: &BitTensor) -> Vec<u64> {
    let (c, h, w) = input.shape();
    let plane = h * w;
    let wpc = words_for(c);
    let mut px = vec![0u64; plane * wpc];
    for (wi, &word) in input.bits().words().iter().enumerate() {
        let mut bits = word;
        while bits != 0 {
            let i = wi * WORD_BITS + bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let (ch, p) = (i / plane, i % plane);
            px[p * wpc + ch / WORD_BITS] |= 1 << (ch % WORD_BITS);
        }
    }
    px
}

/// ±1 convolution via XNOR-popcount. Out-of-bounds taps read −1.
pub fn bin_conv2d_forward(input: &BitTensor, w: &BinConvWeights) -> Result<IntTensor> {
    let (c, h, wd) = input.shape();
    if c != w.in_channels {
        return Err(Error::dim(format!(
            "conv expects {} input channels, got {c}",
            w.in_channels
        )));
    }
    let (oh, ow) = w.output_dims(h, wd)?;
    let wpc = words_for(c);
    let ntaps = w.kernel_h * w.kernel_w;
    let fan_in = w.fan_in() as i32;
    let px = pixel_major(input);

    let mut out = vec![0i32; w.out_channels * oh * ow];
    let mut tap_pixels: Vec<Option<usize>> = vec![None; ntaps];
    for oy in 0..oh {
        for ox in 0..ow {
            for ky in 0..w.kernel_h {
                for kx in 0..w.kernel_w {
                    let iy = (oy * w.stride + ky) as isize - w.pad as isize;
                    let ix = (ox * w.stride + kx) as isize - w.pad as isize;
                    tap_pixels[ky * w.kernel_w + kx] =
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            Some(iy as usize * wd + ix as usize)
                        } else {
                            None
                        };
                }
            }
            for oc in 0..w.out_channels {
                let mut agree = 0u32;
                for (t, pixel) in tap_pixels.iter().enumerate() {
                    let seg = (oc * ntaps + t) * wpc;
                    agree += match pixel {
                        Some(p) => matches(&px[p * wpc..(p + 1) * wpc], &w.taps[seg..seg + wpc], c),
                        None => w.tap_zeros[oc * ntaps + t],
                    };
                }
                out[(oc * oh + oy) * ow + ox] = 2 * agree as i32 - fan_in;
            }
        }
    }
    IntTensor::new(out, w.out_channels, oh, ow)
}
