//! Binarized layer kernels. Every op here is a pure function of its inputs
//! and immutable weights.

mod conv;
mod dense;
mod head;
mod pool;
mod threshold;

pub use conv::{bin_conv2d_forward, conv_output_dims, BinConvWeights};
pub use dense::{bin_dense_forward, BinDenseWeights};
pub use head::{argmax, head_forward, softmax, FloatHead};
pub use pool::{avgpool_global, avgpool_global_ints, maxpool_bits, maxpool_ints, pool_output_dims};
pub use threshold::{fold_bn_sign, threshold_apply, BNParams, Threshold, ThresholdSet};

use crate::error::{Error, Result};

/// Channel-major integer pre-activations produced by binary conv/dense.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntTensor {
    data: Vec<i32>,
    channels: usize,
    height: usize,
    width: usize,
}

impl IntTensor {
    pub fn new(data: Vec<i32>, channels: usize, height: usize, width: usize) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "{} values cannot form a {channels}x{height}x{width} tensor",
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

    /// A (len, 1, 1) tensor, the shape dense layers produce.
    pub fn from_vec(data: Vec<i32>) -> Self {
        let channels = data.len();
        Self {
            data,
            channels,
            height: 1,
            width: 1,
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

    pub fn get(&self, c: usize, y: usize, x: usize) -> i32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[i32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}
