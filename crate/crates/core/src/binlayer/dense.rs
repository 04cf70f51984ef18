use crate::bitpack::{xnor_popcount_dot, BitVector, PruneMask};
use crate::error::{Error, Result};

/// Binary fully connected weights: one packed row per output neuron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinDenseWeights {
    cols: usize,
    rows: Vec<BitVector>,
    masks: Vec<Option<PruneMask>>,
}

impl BinDenseWeights {
    pub fn new(cols: usize, rows: Vec<BitVector>) -> Result<Self> {
        let masks = vec![None; rows.len()];
        Self::with_masks(cols, rows, masks)
    }

    pub fn with_masks(
        cols: usize,
        rows: Vec<BitVector>,
        masks: Vec<Option<PruneMask>>,
    ) -> Result<Self> {
        if masks.len() != rows.len() {
            return Err(Error::dim(format!(
                "{} masks for {} rows",
                masks.len(),
                rows.len()
            )));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::dim(format!(
                    "row {r} has {} weights, expected {cols}",
                    row.len()
                )));
            }
        }
        for (r, m) in masks.iter().enumerate() {
            if let Some(m) = m {
                if m.len() != cols {
                    return Err(Error::dim(format!(
                        "mask {r} has length {}, expected {cols}",
                        m.len()
                    )));
                }
            }
        }
        Ok(Self { cols, rows, masks })
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &BitVector {
        &self.rows[r]
    }

    pub fn mask(&self, r: usize) -> Option<&PruneMask> {
        self.masks[r].as_ref()
    }
}

pub fn bin_dense_forward(input: &BitVector, w: &BinDenseWeights) -> Result<Vec<i32>> {
    if input.len() != w.cols {
        return Err(Error::dim(format!(
            "dense layer expects {} inputs, got {}",
            w.cols,
            input.len()
        )));
    }
    w.rows
        .iter()
        .zip(&w.masks)
        .map(|(row, mask)| xnor_popcount_dot(input, row, mask.as_ref()))
        .collect()
}
