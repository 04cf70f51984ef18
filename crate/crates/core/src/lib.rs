//! Bit-packed binarized neural network inference.
//!
//! Weights and activations are ±1 values packed 64 to a word; dense and
//! convolutional layers reduce to XNOR-popcount, batch-norm + sign is folded
//! into integer thresholds ahead of time, and only the final classifier runs
//! in floating point. On top of the kernels sit a tree-shaped model graph with
//! an inception builder, last-layer transfer learning, sliding-window
//! detection, and a dataflow throughput planner.

pub mod binlayer;
pub mod bitpack;
pub mod dataio;
pub mod detect;
pub mod error;
pub mod netgraph;
pub mod rng;
pub mod throughput;
pub mod transfer;

pub use error::{DataError, Error, ModelFormatError, Result};
