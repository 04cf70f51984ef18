use std::fs;
use std::path::Path;

use super::{ImageU8, LabeledDataset};
use crate::error::{DataError, Result};

const RECORD: usize = 1 + 3 * 32 * 32;

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Records of one label byte followed by a planar 3×32×32 image.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<ImageU8>, Vec<usize>), DataError> {
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(DataError::CifarSize(bytes.len() as u64));
    }
    let mut images = Vec::with_capacity(bytes.len() / RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / RECORD);
    for (index, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(DataError::LabelRange {
                index,
                label: rec[0] as u32,
                classes: 10,
            });
        }
        labels.push(rec[0] as usize);
        images.push(ImageU8::new(rec[1..].to_vec(), 3, 32, 32).expect("record size fixed"));
    }
    Ok((images, labels))
}

/// Concatenate one or more CIFAR-10 binary batch files.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in batch_paths {
        let (im, lb) = parse_cifar10(&fs::read(p)?)?;
        images.extend(im);
        labels.extend(lb);
    }
    LabeledDataset::new(images, labels)?
        .with_class_names(CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect())
}
