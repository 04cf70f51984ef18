use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("singular batch-norm parameters in channel {channel}: var + eps == 0")]
    SingularParameter { channel: usize },

    #[error("layer {layer}: {reason}")]
    Graph { layer: String, reason: String },

    #[error(
        "infeasible folding: layer {layer} ({name}) needs parallelism {required} but cap is {cap}"
    )]
    Infeasible {
        layer: usize,
        name: String,
        required: u64,
        cap: u64,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error(transparent)]
    Model(#[from] ModelFormatError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn graph(layer: impl ToString, reason: impl Into<String>) -> Self {
        Error::Graph {
            layer: layer.to_string(),
            reason: reason.into(),
        }
    }
}

/// Failures reading or writing a BNNM model file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelFormatError {
    #[error("bad model magic {0:?}, expected \"BNNM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported model version {0}")]
    UnsupportedVersion(u16),
    #[error("model checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("model truncated at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed model: {0}")]
    Malformed(String),
}

/// Failures parsing dataset and image files.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataError {
    #[error("bad magic {found} in {what}, expected {expected}")]
    BadMagic {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("{what} truncated: expected {expected} bytes, found {actual}")]
    Truncated {
        what: &'static str,
        expected: u64,
        actual: u64,
    },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("CIFAR-10 file size {0} is not a multiple of 3073")]
    CifarSize(u64),
    #[error("label {label} at record {index} is out of range (< {classes})")]
    LabelRange {
        index: usize,
        label: u32,
        classes: u32,
    },
    #[error("unsupported image magic {0:?}")]
    UnsupportedMagic(String),
    #[error("unsupported maxval {0}, only 255 is supported")]
    UnsupportedMaxval(u32),
    #[error("malformed image header: {0}")]
    Header(String),
}
