//! Batch-norm + sign folded into per-channel integer thresholds.

use super::IntTensor;
use crate::bitpack::{BitTensor, BitVector};
use crate::error::{Error, Result};

/// One channel's decision rule on an integer pre-activation `s`:
/// `flip == false` fires (+1) iff `s >= threshold`, `flip == true` fires iff
/// `s <= threshold`.
///
/// Constant channels use sentinels: `(i32::MIN, false)` always fires and
/// `(i32::MAX, false)` never fires, since `|s|` never reaches `i32::MAX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Threshold {
    pub threshold: i32,
    pub flip: bool,
}

impl Threshold {
    pub const ALWAYS: Threshold = Threshold {
        threshold: i32::MIN,
        flip: false,
    };
    pub const NEVER: Threshold = Threshold {
        threshold: i32::MAX,
        flip: false,
    };

    /// Plain sign: fires iff `s >= 0`.
    pub const SIGN: Threshold = Threshold {
        threshold: 0,
        flip: false,
    };

    #[inline]
    pub fn fires(self, s: i32) -> bool {
        if self.flip {
            s <= self.threshold
        } else {
            s >= self.threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThresholdSet {
    entries: Vec<Threshold>,
}

impl ThresholdSet {
    pub fn new(entries: Vec<Threshold>) -> Self {
        Self { entries }
    }

    pub fn sign(channels: usize) -> Self {
        Self::new(vec![Threshold::SIGN; channels])
    }

    pub fn channels(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Threshold] {
        &self.entries
    }

    pub fn get(&self, c: usize) -> Threshold {
        self.entries[c]
    }
}

/// Per-channel batch-norm statistics as exported by a float trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct BNParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub eps: f64,
}

impl BNParams {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.gamma.len();
        if self.beta.len() != n || self.mean.len() != n || self.var.len() != n {
            return Err(Error::dim(format!(
                "batch-norm arrays differ in length: gamma {}, beta {}, mean {}, var {}",
                n,
                self.beta.len(),
                self.mean.len(),
                self.var.len()
            )));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::invalid(format!(
                "eps must be finite and >= 0, got {}",
                self.eps
            )));
        }
        for c in 0..n {
            let vals = [self.gamma[c], self.beta[c], self.mean[c], self.var[c]];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "channel {c}: non-finite batch-norm parameter"
                )));
            }
            if self.var[c] < 0.0 {
                return Err(Error::invalid(format!(
                    "channel {c}: negative variance {}",
                    self.var[c]
                )));
            }
            if self.var[c] + self.eps == 0.0 {
                return Err(Error::SingularParameter { channel: c });
            }
        }
        Ok(())
    }

    /// Reference evaluation `gamma·(s − mean)/sqrt(var + eps) + beta`, in that
    /// operation order. Folding reproduces the sign of exactly this value.
    pub fn normalize(&self, c: usize, s: f64) -> f64 {
        self.gamma[c] * (s - self.mean[c]) / (self.var[c] + self.eps).sqrt() + self.beta[c]
    }
}

/// Fold batch-norm followed by sign (with sign(0) = +1) into integer
/// thresholds valid for every pre-activation in `[-fan_in, fan_in]`.
///
/// The closed form `tau = mean − beta·sqrt(var+eps)/gamma` gives the cut,
/// rounded up (gamma > 0) or down (gamma < 0). The cut is then nudged
/// against the reference evaluation so the integer rule agrees with
/// `sign(normalize(s))` even where floating-point rounding lands next to a
/// tie. Cuts outside the reachable range clamp to `-fan_in` / `fan_in + 1`.
pub fn fold_bn_sign(bn: &BNParams, fan_in: usize) -> Result<ThresholdSet> {
    bn.check()?;
    if fan_in >= i32::MAX as usize {
        return Err(Error::invalid(format!(
            "fan-in {fan_in} overflows 32-bit accumulators"
        )));
    }
    let n = fan_in as i64;
    let entries = (0..bn.channels())
        .map(|c| {
            let gamma = bn.gamma[c];
            if gamma == 0.0 {
                return if bn.beta[c] >= 0.0 {
                    Threshold::ALWAYS
                } else {
                    Threshold::NEVER
                };
            }
            let positive = |s: i64| bn.normalize(c, s as f64) >= 0.0;
            let tau = bn.mean[c] - bn.beta[c] * (bn.var[c] + bn.eps).sqrt() / gamma;
            if gamma > 0.0 {
                // smallest s in [-n, n+1] with positive(s); n+1 means never
                let mut t = clamp_cut(tau.ceil(), -n, n + 1);
                while t > -n && positive(t - 1) {
                    t -= 1;
                }
                while t <= n && !positive(t) {
                    t += 1;
                }
                Threshold {
                    threshold: t as i32,
                    flip: false,
                }
            } else {
                // largest s in [-n-1, n] with positive(s); -n-1 means never
                let mut t = clamp_cut(tau.floor(), -n - 1, n);
                while t < n && positive(t + 1) {
                    t += 1;
                }
                while t >= -n && !positive(t) {
                    t -= 1;
                }
                Threshold {
                    threshold: t as i32,
                    flip: true,
                }
            }
        })
        .collect();
    Ok(ThresholdSet::new(entries))
}

fn clamp_cut(x: f64, lo: i64, hi: i64) -> i64 {
    if x.is_nan() {
        lo
    } else {
        x.clamp(lo as f64, hi as f64) as i64
    }
}

pub fn threshold_apply(sums: &IntTensor, t: &ThresholdSet) -> Result<BitTensor> {
    let (c, h, w) = sums.shape();
    if c != t.channels() {
        return Err(Error::dim(format!(
            "threshold set has {} channels, input has {c}",
            t.channels()
        )));
    }
    let plane = h * w;
    let bits = BitVector::from_bools(
        sums.data()
            .iter()
            .enumerate()
            .map(|(i, &s)| t.entries[i / plane].fires(s)),
    );
    BitTensor::new(bits, c, h, w)
}
