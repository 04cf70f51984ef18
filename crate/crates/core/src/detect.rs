//! Sliding-window detection with a trained classifier.
//!
//! Every window of the (optionally downscaled) image is classified on its
//! own; windows whose top class clears `min_prob` and is not the background
//! class become window-aligned boxes, which per-class greedy NMS then thins.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::binlayer::argmax;
use crate::dataio::{ImageU8, LabeledDataset};
use crate::error::{Error, Result};
use crate::netgraph::{forward, ModelGraph};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub class_id: usize,
    pub score: f64,
}

impl Detection {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn iou(&self, other: &Detection) -> f64 {
        box_iou(
            (self.x, self.y, self.w, self.h),
            (other.x, other.y, other.w, other.h),
        )
    }
}

/// Intersection over union of two `(x, y, w, h)` boxes.
pub fn box_iou(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> f64 {
    let ix = (a.0 + a.2).min(b.0 + b.2).saturating_sub(a.0.max(b.0));
    let iy = (a.1 + a.3).min(b.1 + b.3).saturating_sub(a.1.max(b.1));
    let inter = (ix * iy) as f64;
    let union = (a.2 * a.3 + b.2 * b.3) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectConfig {
    pub stride: usize,
    pub min_prob: f64,
    /// Downscale factors; each must be >= 1.
    pub scales: Vec<f64>,
    pub nms_iou: f64,
    pub background_class: Option<usize>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            min_prob: 0.5,
            scales: vec![1.0],
            nms_iou: 0.3,
            background_class: None,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        if !(self.min_prob > 0.0 && self.min_prob <= 1.0) {
            return Err(Error::invalid(format!(
                "min_prob must lie in (0, 1], got {}",
                self.min_prob
            )));
        }
        if !(self.nms_iou >= 0.0 && self.nms_iou < 1.0) {
            return Err(Error::invalid(format!(
                "nms_iou must lie in [0, 1), got {}",
                self.nms_iou
            )));
        }
        if self.scales.is_empty() {
            return Err(Error::invalid("at least one scale is required"));
        }
        if let Some(s) = self.scales.iter().find(|s| !(s.is_finite() && **s >= 1.0)) {
            return Err(Error::invalid(format!(
                "scales must be finite and >= 1, got {s}"
            )));
        }
        Ok(())
    }
}

/// Top-left corners of every window position, row by row.
pub fn sliding_windows(
    image: (usize, usize),
    window: (usize, usize),
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    let ((ih, iw), (wh, ww)) = (image, window);
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if wh == 0 || ww == 0 || wh > ih || ww > iw {
        return Err(Error::dim(format!(
            "window {wh}x{ww} does not fit inside image {ih}x{iw}"
        )));
    }
    let ys = (0..=ih - wh).step_by(stride);
    Ok(ys
        .flat_map(|y| (0..=iw - ww).step_by(stride).map(move |x| (x, y)))
        .collect())
}

/// Nearest-neighbour downscale by `factor` (>= 1): output pixel (y, x)
/// samples source (floor(y·factor), floor(x·factor)).
pub fn downscale_nearest(image: &ImageU8, factor: f64) -> Result<ImageU8> {
    if !(factor.is_finite() && factor >= 1.0) {
        return Err(Error::invalid(format!(
            "scale factor must be >= 1, got {factor}"
        )));
    }
    let (c, h, w) = image.shape();
    let (oh, ow) = ((h as f64 / factor) as usize, (w as f64 / factor) as usize);
    if oh == 0 || ow == 0 {
        return Err(Error::dim(format!(
            "{h}x{w} image vanishes at scale {factor}"
        )));
    }
    let src = |o: usize, n: usize| ((o as f64 * factor) as usize).min(n - 1);
    let mut data = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            let sy = src(y, h);
            for x in 0..ow {
                data.push(image.get(ch, sy, src(x, w)));
            }
        }
    }
    ImageU8::new(data, c, oh, ow)
}

fn order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.x.cmp(&b.x))
        .then(a.y.cmp(&b.y))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.w.cmp(&b.w))
        .then(a.h.cmp(&b.h))
}

/// Greedy per-class suppression in (score desc, x asc, y asc) order: a box
/// is dropped when its IoU with a kept box of the same class exceeds
/// `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(order);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for d in sorted {
        if !kept
            .iter()
            .any(|k| k.class_id == d.class_id && k.iou(&d) > iou_threshold)
        {
            kept.push(d);
        }
    }
    kept
}

/// Classify every window at every scale and return suppressed detections
/// sorted by descending score. Scales at which the image becomes smaller
/// than the window are skipped; if none fits, this is a dimension error.
pub fn detect_objects(
    graph: &ModelGraph,
    image: &ImageU8,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if graph.head().is_none() {
        return Err(Error::invalid(
            "detection needs a model with a classification head",
        ));
    }
    let (mc, wh, ww, _) = graph.input();
    let (c, h, w) = image.shape();
    if c != mc {
        return Err(Error::dim(format!(
            "model takes {mc} channels, image has {c}"
        )));
    }
    if let Some(bg) = cfg.background_class {
        let classes = graph.head().expect("checked").classes();
        if bg >= classes {
            return Err(Error::invalid(format!(
                "background class {bg} is not among the model's {classes} classes"
            )));
        }
    }

    let mut raw = Vec::new();
    let mut fitted = false;
    for &scale in &cfg.scales {
        let scaled = if scale == 1.0 {
            image.clone()
        } else {
            match downscale_nearest(image, scale) {
                Ok(s) => s,
                Err(_) => continue,
            }
        };
        let positions =
            match sliding_windows((scaled.height(), scaled.width()), (wh, ww), cfg.stride) {
                Ok(p) => p,
                Err(_) => continue,
            };
        fitted = true;
        let found: Vec<Option<Detection>> = positions
            .par_iter()
            .map(|&(x, y)| {
                let probs = forward(graph, &scaled.crop(x, y, wh, ww)?)?;
                let class_id = argmax(&probs).expect("non-empty probabilities");
                let score = probs[class_id];
                if score < cfg.min_prob || Some(class_id) == cfg.background_class {
                    return Ok(None);
                }
                // map the window back to source pixels, clipped to the image
                let x0 = ((x as f64 * scale) as usize).min(w - 1);
                let y0 = ((y as f64 * scale) as usize).min(h - 1);
                let x1 = (((x + ww) as f64 * scale).ceil() as usize).min(w);
                let y1 = (((y + wh) as f64 * scale).ceil() as usize).min(h);
                Ok(Some(Detection {
                    x: x0,
                    y: y0,
                    w: x1 - x0,
                    h: y1 - y0,
                    class_id,
                    score,
                }))
            })
            .collect::<Result<_>>()?;
        raw.extend(found.into_iter().flatten());
    }
    if !fitted {
        return Err(Error::dim(format!(
            "window {wh}x{ww} does not fit inside image {h}x{w} at any scale"
        )));
    }
    Ok(nms(&raw, cfg.nms_iou))
}

/// `class_label score x y w h`, score to 4 decimals.
pub fn format_detection(d: &Detection, label: &str) -> String {
    format!("{label} {:.4} {} {} {} {}", d.score, d.x, d.y, d.w, d.h)
}

/// Copy of `image` with a one-pixel outline (value 255 in every channel)
/// around each detection.
pub fn annotate(image: &ImageU8, dets: &[Detection]) -> ImageU8 {
    let mut out = image.clone();
    let (c, h, w) = image.shape();
    for d in dets {
        if d.w == 0 || d.h == 0 || d.x >= w || d.y >= h {
            continue;
        }
        let (x1, y1) = ((d.x + d.w).min(w) - 1, (d.y + d.h).min(h) - 1);
        for ch in 0..c {
            for x in d.x..=x1 {
                out.set(ch, d.y, x, 255);
                out.set(ch, y1, x, 255);
            }
            for y in d.y..=y1 {
                out.set(ch, y, d.x, 255);
                out.set(ch, y, x1, 255);
            }
        }
    }
    out
}

/// Shift an image by (dx, dy) pixels, filling uncovered pixels with 0.
pub fn shift_image(image: &ImageU8, dx: i64, dy: i64) -> ImageU8 {
    let (c, h, w) = image.shape();
    let mut out = ImageU8::filled(c, h, w, 0);
    for ch in 0..c {
        for y in 0..h {
            let sy = y as i64 - dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for x in 0..w {
                let sx = x as i64 - dx;
                if sx >= 0 && sx < w as i64 {
                    out.set(ch, y, x, image.get(ch, sy as usize, sx as usize));
                }
            }
        }
    }
    out
}

/// Recipe for teaching a classifier to reject windows that do not frame an
/// object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackgroundAugment {
    pub samples: usize,
    /// Share of samples that are centred objects, jittered by up to `jitter` px.
    pub positive_fraction: f64,
    /// Share of samples that are blank (all-zero) windows.
    pub blank_fraction: f64,
    pub jitter: usize,
    /// Remaining samples are objects shifted by `min_shift..=max_shift` px
    /// (Chebyshev distance) and labelled background.
    pub min_shift: usize,
    pub max_shift: usize,
}

impl Default for BackgroundAugment {
    fn default() -> Self {
        Self {
            samples: 60_000,
            positive_fraction: 0.5,
            blank_fraction: 0.1,
            jitter: 2,
            min_shift: 6,
            max_shift: 20,
        }
    }
}

pub const BACKGROUND_LABEL: &str = "background";

/// Build a detector training set from an object dataset. The background
/// label is `data.classes()` and is named [`BACKGROUND_LABEL`]; unnamed
/// classes are named by their index.
pub fn background_augmented(
    data: &LabeledDataset,
    aug: &BackgroundAugment,
    seed: u64,
) -> Result<LabeledDataset> {
    if data.is_empty() {
        return Err(Error::invalid("cannot augment an empty dataset"));
    }
    let fractions_ok = (0.0..=1.0).contains(&aug.positive_fraction)
        && (0.0..=1.0).contains(&aug.blank_fraction)
        && aug.positive_fraction + aug.blank_fraction <= 1.0;
    if !fractions_ok {
        return Err(Error::invalid(
            "augment fractions must be in [0, 1] and sum to at most 1",
        ));
    }
    if aug.min_shift > aug.max_shift || aug.min_shift == 0 {
        return Err(Error::invalid("need 0 < min_shift <= max_shift"));
    }
    let background = data.classes();
    let (c, h, w) = data.image_shape().expect("non-empty");
    let mut rng = SplitMix64::new(seed);
    let offset =
        |lo: i64, hi: i64, rng: &mut SplitMix64| lo + rng.below((hi - lo + 1) as u64) as i64;
    let mut images = Vec::with_capacity(aug.samples);
    let mut labels = Vec::with_capacity(aug.samples);
    for _ in 0..aug.samples {
        let k = rng.below(data.len() as u64) as usize;
        let (img, label) = (&data.images()[k], data.labels()[k]);
        let r = rng.next_f64();
        if r < aug.positive_fraction {
            let j = aug.jitter as i64;
            let (dx, dy) = (offset(-j, j, &mut rng), offset(-j, j, &mut rng));
            images.push(shift_image(img, dx, dy));
            labels.push(label);
        } else if r < aug.positive_fraction + aug.blank_fraction {
            images.push(ImageU8::filled(c, h, w, 0));
            labels.push(background);
        } else {
            let m = aug.max_shift as i64;
            let (dx, dy) = loop {
                let (dx, dy) = (offset(-m, m, &mut rng), offset(-m, m, &mut rng));
                if dx.abs().max(dy.abs()) >= aug.min_shift as i64 {
                    break (dx, dy);
                }
            };
            images.push(shift_image(img, dx, dy));
            labels.push(background);
        }
    }
    let mut names = match data.class_names() {
        Some(names) => names.to_vec(),
        None => (0..background).map(|c| c.to_string()).collect(),
    };
    names.push(BACKGROUND_LABEL.into());
    LabeledDataset::new(images, labels)?.with_class_names(names)
}
