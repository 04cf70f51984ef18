//! Naive ±1 reference implementations. Everything here works on plain
//! `i32` arrays in channel-major order and shares no code with the packed
//! kernels.
#![allow(dead_code)]

use binnet_core::binlayer::BNParams;
use binnet_core::bitpack::{BitTensor, BitVector};
use binnet_core::dataio::ImageU8;
use rand::rngs::StdRng;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<i32>,
}

impl Tensor {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<i32>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> i32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn from_bits(t: &BitTensor) -> Self {
        let (c, h, w) = t.shape();
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(if t.get(ch, y, x) { 1 } else { -1 });
                }
            }
        }
        Self::new(c, h, w, data)
    }
}

/// Pre-head value in oracle form.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Signs(Tensor),
    Ints(Tensor),
    Features(Vec<f64>),
}

pub fn random_signs(rng: &mut StdRng, n: usize) -> Vec<i8> {
    (0..n)
        .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
        .collect()
}

pub fn pack(v: &[i8]) -> BitVector {
    BitVector::pack(v).expect("±1 values")
}

pub fn random_image(rng: &mut StdRng, c: usize, h: usize, w: usize) -> ImageU8 {
    let data = (0..c * h * w).map(|_| rng.gen()).collect();
    ImageU8::new(data, c, h, w).unwrap()
}

pub fn binarize(image: &ImageU8, threshold: u8) -> Tensor {
    let (c, h, w) = image.shape();
    let data = image
        .data()
        .iter()
        .map(|&p| if p >= threshold { 1 } else { -1 })
        .collect();
    Tensor::new(c, h, w, data)
}

pub fn dot(a: &[i8], b: &[i8], keep: Option<&[bool]>) -> i32 {
    let mut s = 0i32;
    for i in 0..a.len() {
        if keep.is_none_or(|k| k[i]) {
            s += a[i] as i32 * b[i] as i32;
        }
    }
    s
}

/// Direct convolution; filters are indexed `[oc][(ic·kh + ky)·kw + kx]` and
/// taps outside the input read −1.
pub fn conv(
    x: &Tensor,
    filters: &[Vec<i8>],
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let oh = (x.h + 2 * pad - kh) / stride + 1;
    let ow = (x.w + 2 * pad - kw) / stride + 1;
    let mut data = Vec::with_capacity(filters.len() * oh * ow);
    for f in filters {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0i32;
                for ic in 0..x.c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * stride + ky) as isize - pad as isize;
                            let xx = (ox * stride + kx) as isize - pad as isize;
                            let v = if y < 0 || xx < 0 || y as usize >= x.h || xx as usize >= x.w {
                                -1
                            } else {
                                x.at(ic, y as usize, xx as usize)
                            };
                            s += v * f[(ic * kh + ky) * kw + kx] as i32;
                        }
                    }
                }
                data.push(s);
            }
        }
    }
    Tensor::new(filters.len(), oh, ow, data)
}

pub fn dense(x: &Tensor, rows: &[Vec<i8>]) -> Tensor {
    let data = rows
        .iter()
        .map(|r| r.iter().zip(&x.data).map(|(&w, &v)| w as i32 * v).sum())
        .collect();
    Tensor::new(rows.len(), 1, 1, data)
}

/// Batch norm then sign, with sign(0) = +1, evaluated in floating point.
pub fn bn_sign(x: &Tensor, bn: &BNParams) -> Tensor {
    let plane = x.h * x.w;
    let data = x
        .data
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let c = i / plane;
            let y =
                bn.gamma[c] * (s as f64 - bn.mean[c]) / (bn.var[c] + bn.eps).sqrt() + bn.beta[c];
            if y >= 0.0 {
                1
            } else {
                -1
            }
        })
        .collect();
    Tensor::new(x.c, x.h, x.w, data)
}

/// Max over the in-bounds part of each window.
pub fn maxpool(x: &Tensor, k: usize, stride: usize, pad: usize) -> Tensor {
    let oh = (x.h + 2 * pad - k) / stride + 1;
    let ow = (x.w + 2 * pad - k) / stride + 1;
    let mut data = Vec::with_capacity(x.c * oh * ow);
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = i32::MIN;
                for ky in 0..k {
                    for kx in 0..k {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        let xx = (ox * stride + kx) as isize - pad as isize;
                        if y >= 0 && xx >= 0 && (y as usize) < x.h && (xx as usize) < x.w {
                            best = best.max(x.at(c, y as usize, xx as usize));
                        }
                    }
                }
                data.push(best);
            }
        }
    }
    Tensor::new(x.c, oh, ow, data)
}

pub fn global_avg(x: &Tensor) -> Vec<f64> {
    let plane = x.h * x.w;
    (0..x.c)
        .map(|c| {
            x.data[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| v as i64)
                .sum::<i64>() as f64
                / plane as f64
        })
        .collect()
}

pub fn concat(parts: &[Tensor]) -> Tensor {
    let (h, w) = (parts[0].h, parts[0].w);
    let mut data = Vec::new();
    let mut c = 0;
    for p in parts {
        assert_eq!((p.h, p.w), (h, w));
        data.extend_from_slice(&p.data);
        c += p.c;
    }
    Tensor::new(c, h, w, data)
}

/// Random batch-norm parameters, some with ties landing on integers.
pub fn random_bn(rng: &mut StdRng, channels: usize, fan_in: usize) -> BNParams {
    let n = fan_in as f64;
    let mut bn = BNParams {
        gamma: Vec::new(),
        beta: Vec::new(),
        mean: Vec::new(),
        var: Vec::new(),
        eps: 1e-5,
    };
    for _ in 0..channels {
        let mag = 10f64.powf(rng.gen_range(-3.0..1.0));
        let gamma = match rng.gen_range(0..20) {
            0 => 0.0,
            1..=9 => -mag,
            _ => mag,
        };
        let var = 10f64.powf(rng.gen_range(-6.0..1.0));
        let (mean, beta) = if rng.gen_range(0..4) == 0 {
            (rng.gen_range(-(n as i64)..=n as i64) as f64, 0.0)
        } else {
            (rng.gen_range(-n..=n), rng.gen_range(-2.0..2.0))
        };
        bn.gamma.push(gamma);
        bn.beta.push(beta);
        bn.mean.push(mean);
        bn.var.push(var);
    }
    bn
}
