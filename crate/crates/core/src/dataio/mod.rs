//! Dataset and image loaders plus deterministic splitting.
//!
//! Loaders read whole files and validate declared sizes against the bytes
//! actually present before allocating anything from header fields.

mod cifar;
mod idx;
mod pnm;

pub use cifar::{load_cifar10, parse_cifar10};
pub use idx::{load_mnist, parse_idx_images, parse_idx_labels};
pub use pnm::{encode_pnm, load_image, parse_pnm, save_image};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Channel-major u8 image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageU8 {
    data: Vec<u8>,
    channels: usize,
    height: usize,
    width: usize,
}

impl ImageU8 {
    pub fn new(data: Vec<u8>, channels: usize, height: usize, width: usize) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "{} bytes cannot form a {channels}x{height}x{width} image",
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

    pub fn filled(channels: usize, height: usize, width: usize, value: u8) -> Self {
        Self {
            data: vec![value; channels * height * width],
            channels,
            height,
            width,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: u8) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Copy of the `h × w` region with top-left corner (x, y).
    pub fn crop(&self, x: usize, y: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::dim(format!(
                "crop {w}x{h} at ({x},{y}) exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for row in y..y + h {
                let start = (c * self.height + row) * self.width + x;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Self::new(data, self.channels, h, w)
    }

    /// Copy `src` into this image with its top-left corner at (x, y).
    pub fn paste(&mut self, src: &ImageU8, x: usize, y: usize) -> Result<()> {
        if src.channels != self.channels
            || y + src.height > self.height
            || x + src.width > self.width
        {
            return Err(Error::dim(format!(
                "cannot paste {:?} at ({x},{y}) into {:?}",
                src.shape(),
                self.shape()
            )));
        }
        for c in 0..src.channels {
            for row in 0..src.height {
                for col in 0..src.width {
                    self.set(c, y + row, x + col, src.get(c, row, col));
                }
            }
        }
        Ok(())
    }
}

/// Images of one uniform shape with integer labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    images: Vec<ImageU8>,
    labels: Vec<usize>,
    class_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(images: Vec<ImageU8>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::dim(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if let Some((i, img)) = images
                .iter()
                .enumerate()
                .find(|(_, im)| im.shape() != first.shape())
            {
                return Err(Error::dim(format!(
                    "image {i} has shape {:?}, expected {:?}",
                    img.shape(),
                    first.shape()
                )));
            }
        }
        Ok(Self {
            images,
            labels,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if let Some(&max) = self.labels.iter().max() {
            if max >= names.len() {
                return Err(Error::invalid(format!(
                    "label {max} has no name among {} classes",
                    names.len()
                )));
            }
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[ImageU8] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// Number of classes: named classes if present, else max label + 1.
    pub fn classes(&self) -> usize {
        match &self.class_names {
            Some(n) => n.len(),
            None => self.labels.iter().max().map_or(0, |m| m + 1),
        }
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(ImageU8::shape)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ImageU8, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// Items at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// The first `n` items (or all of them).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Shuffle with SplitMix64-seeded Fisher–Yates, then send the first
/// `ceil(fraction · N)` items to train and the rest to validation.
pub fn split_shuffle(
    data: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    SplitMix64::new(seed).shuffle(&mut order);
    let cut = ((fraction * data.len() as f64).ceil() as usize).min(data.len());
    Ok((data.select(&order[..cut]), data.select(&order[cut..])))
}
