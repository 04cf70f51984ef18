use std::fs;
use std::path::Path;

use super::{ImageU8, LabeledDataset};
use crate::error::{DataError, Result};

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

fn be_u32(bytes: &[u8], at: usize, what: &'static str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated {
            what,
            expected: (at + 4) as u64,
            actual: bytes.len() as u64,
        })
}

/// Parse an IDX3 image file into (count, rows, cols, pixels).
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<ImageU8>, DataError> {
    const WHAT: &str = "IDX image file";
    let magic = be_u32(bytes, 0, WHAT)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            what: WHAT,
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let count = be_u32(bytes, 4, WHAT)? as u64;
    let rows = be_u32(bytes, 8, WHAT)? as u64;
    let cols = be_u32(bytes, 12, WHAT)? as u64;
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .unwrap_or(u64::MAX);
    if expected != bytes.len() as u64 {
        return Err(DataError::Truncated {
            what: WHAT,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let plane = rows * cols;
    if plane == 0 {
        return Ok((0..count)
            .map(|_| ImageU8::filled(1, rows, cols, 0))
            .collect());
    }
    Ok(bytes[16..]
        .chunks_exact(plane)
        .map(|px| ImageU8::new(px.to_vec(), 1, rows, cols).expect("chunk matches plane"))
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, DataError> {
    const WHAT: &str = "IDX label file";
    let magic = be_u32(bytes, 0, WHAT)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            what: WHAT,
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let count = be_u32(bytes, 4, WHAT)? as u64;
    if count + 8 != bytes.len() as u64 {
        return Err(DataError::Truncated {
            what: WHAT,
            expected: count + 8,
            actual: bytes.len() as u64,
        });
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Load an MNIST image/label file pair.
pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(DataError::DimMismatch(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        ))
        .into());
    }
    LabeledDataset::new(images, labels)
}
