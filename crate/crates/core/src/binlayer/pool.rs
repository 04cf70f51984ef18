use super::IntTensor;
use crate::bitpack::{BitTensor, BitVector};
use crate::error::{Error, Result};

/// Output size of a `k`-window pool with the given stride and padding.
pub fn pool_output_dims(
    input: (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    if k == 0 || stride == 0 {
        return Err(Error::invalid("pool window and stride must be at least 1"));
    }
    if pad >= k {
        return Err(Error::invalid(format!(
            "pool padding {pad} must be smaller than the window {k}"
        )));
    }
    super::conv_output_dims(input, (k, k), stride, pad).map_err(|_| {
        Error::dim(format!(
            "{k}x{k} pool has no valid position on a {}x{} input",
            input.0, input.1
        ))
    })
}

/// Visit the in-bounds input coordinates of window (oy, ox).
#[inline]
fn window(
    (h, w): (usize, usize),
    (oy, ox): (usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
) -> impl Iterator<Item = (usize, usize)> {
    let y0 = (oy * stride) as isize - pad as isize;
    let x0 = (ox * stride) as isize - pad as isize;
    (0..k as isize).flat_map(move |dy| {
        (0..k as isize).filter_map(move |dx| {
            let (y, x) = (y0 + dy, x0 + dx);
            (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w)
                .then_some((y as usize, x as usize))
        })
    })
}

/// Max pooling over ±1 values: a window is +1 iff any bit in it is +1.
/// Padding reads −1, so it never wins.
pub fn maxpool_bits(input: &BitTensor, k: usize, stride: usize, pad: usize) -> Result<BitTensor> {
    let (c, h, w) = input.shape();
    let (oh, ow) = pool_output_dims((h, w), k, stride, pad)?;
    let mut bits = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                bits.push(
                    window((h, w), (oy, ox), k, stride, pad).any(|(y, x)| input.get(ch, y, x)),
                );
            }
        }
    }
    BitTensor::new(BitVector::from_bools(bits), c, oh, ow)
}

/// Max pooling over integer pre-activations; padding is ignored.
pub fn maxpool_ints(input: &IntTensor, k: usize, stride: usize, pad: usize) -> Result<IntTensor> {
    let (c, h, w) = input.shape();
    let (oh, ow) = pool_output_dims((h, w), k, stride, pad)?;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let m = window((h, w), (oy, ox), k, stride, pad)
                    .map(|(y, x)| input.get(ch, y, x))
                    .max()
                    .expect("pad < k leaves every window non-empty");
                out.push(m);
            }
        }
    }
    IntTensor::new(out, c, oh, ow)
}

/// Per-channel mean of the ±1 values: `(2·ones − count) / count`.
pub fn avgpool_global(input: &BitTensor) -> Result<Vec<f64>> {
    let (c, h, w) = input.shape();
    let plane = h * w;
    if plane == 0 {
        return Err(Error::dim(
            "global average pool over an empty spatial extent",
        ));
    }
    let bits = input.bits();
    Ok((0..c)
        .map(|ch| {
            let ones = (ch * plane..(ch + 1) * plane)
                .filter(|&i| bits.get(i))
                .count();
            (2 * ones) as f64 / plane as f64 - 1.0
        })
        .collect())
}

/// Per-channel mean of integer pre-activations.
pub fn avgpool_global_ints(input: &IntTensor) -> Result<Vec<f64>> {
    let plane = input.height() * input.width();
    if plane == 0 {
        return Err(Error::dim(
            "global average pool over an empty spatial extent",
        ));
    }
    Ok((0..input.channels())
        .map(|ch| input.channel(ch).iter().map(|&s| s as f64).sum::<f64>() / plane as f64)
        .collect())
}
