use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::{LayerSpec, ModelGraph};
use crate::binlayer::{
    avgpool_global, avgpool_global_ints, bin_conv2d_forward, bin_dense_forward, head_forward,
    maxpool_bits, maxpool_ints, softmax, threshold_apply, IntTensor,
};
use crate::bitpack::{BitTensor, BitVector};
use crate::dataio::ImageU8;
use crate::error::{Error, Result};

/// Intermediate value flowing between layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Bits(BitTensor),
    Ints(IntTensor),
    Features(Vec<f64>),
}

impl Activation {
    /// Real feature vector: pooled features as-is, bit maps flattened to ±1.
    pub fn into_features(self) -> Result<Vec<f64>> {
        match self {
            Activation::Features(f) => Ok(f),
            Activation::Bits(b) => Ok(b.to_signs()),
            Activation::Ints(_) => Err(Error::dim("integer pre-activations are not features")),
        }
    }
}

/// `pixel >= threshold` → +1, else −1.
pub fn binarize_input(image: &ImageU8, threshold: u8) -> BitTensor {
    let (c, h, w) = image.shape();
    let bits = BitVector::from_bools(image.data().iter().map(|&p| p >= threshold));
    BitTensor::new(bits, c, h, w).expect("one bit per pixel")
}

fn check_image(graph: &ModelGraph, image: &ImageU8) -> Result<()> {
    let (c, h, w, _) = graph.input();
    if image.shape() != (c, h, w) {
        return Err(Error::dim(format!(
            "model expects a {c}x{h}x{w} image, got {:?}",
            image.shape()
        )));
    }
    Ok(())
}

fn run_layer(layer: &LayerSpec, act: Activation) -> Result<Activation> {
    Ok(match (layer, act) {
        (LayerSpec::Input { .. }, a) => a,
        (LayerSpec::BinConv(w), Activation::Bits(b)) => {
            Activation::Ints(bin_conv2d_forward(&b, w)?)
        }
        (LayerSpec::BinDense(w), Activation::Bits(b)) => {
            Activation::Ints(IntTensor::from_vec(bin_dense_forward(b.bits(), w)?))
        }
        (LayerSpec::Threshold(t), Activation::Ints(s)) => Activation::Bits(threshold_apply(&s, t)?),
        (
            LayerSpec::MaxPool {
                kernel,
                stride,
                pad,
            },
            Activation::Bits(b),
        ) => Activation::Bits(maxpool_bits(&b, *kernel, *stride, *pad)?),
        (
            LayerSpec::MaxPool {
                kernel,
                stride,
                pad,
            },
            Activation::Ints(s),
        ) => Activation::Ints(maxpool_ints(&s, *kernel, *stride, *pad)?),
        (LayerSpec::GlobalAvgPool, Activation::Bits(b)) => {
            Activation::Features(avgpool_global(&b)?)
        }
        (LayerSpec::GlobalAvgPool, Activation::Ints(s)) => {
            Activation::Features(avgpool_global_ints(&s)?)
        }
        (LayerSpec::Branches(branches), Activation::Bits(b)) => {
            let mut outputs = Vec::with_capacity(branches.len());
            for seq in branches {
                let mut a = Activation::Bits(b.clone());
                for l in seq {
                    a = run_layer(l, a)?;
                }
                match a {
                    Activation::Bits(t) => outputs.push(t),
                    _ => return Err(Error::dim("branch did not end in bits")),
                }
            }
            Activation::Bits(concat(&outputs)?)
        }
        (LayerSpec::Concat, a) => a,
        (LayerSpec::Head(h), a) => Activation::Features(head_forward(&a.into_features()?, h)?),
        (l, _) => {
            return Err(Error::dim(format!(
                "layer {} received an activation of the wrong kind",
                l.kind()
            )))
        }
    })
}

/// Channel-axis concatenation; channel-major storage makes this a plain
/// bit append.
fn concat(parts: &[BitTensor]) -> Result<BitTensor> {
    let (h, w) = (parts[0].height(), parts[0].width());
    let channels = parts.iter().map(BitTensor::channels).sum();
    let bits = BitVector::from_bools(parts.iter().flat_map(|p| {
        let v = p.bits();
        (0..v.len()).map(move |i| v.get(i))
    }));
    BitTensor::new(bits, channels, h, w)
}

/// Apply `layers` in order to `act`, without shape validation beyond what
/// each kernel checks.
pub fn run_sequence(layers: &[LayerSpec], act: Activation) -> Result<Activation> {
    layers.iter().try_fold(act, |a, l| run_layer(l, a))
}

/// Run every layer before the head and return the raw activation.
pub fn run_to_head(graph: &ModelGraph, image: &ImageU8) -> Result<Activation> {
    check_image(graph, image)?;
    let (.., threshold) = graph.input();
    let mut act = Activation::Bits(binarize_input(image, threshold));
    for layer in graph.extractor() {
        act = run_layer(layer, act)?;
    }
    Ok(act)
}

/// Frozen-extractor features: everything up to the head.
pub fn extract_features(graph: &ModelGraph, image: &ImageU8) -> Result<Vec<f64>> {
    run_to_head(graph, image)?.into_features()
}

/// [`extract_features`] over many images on the rayon pool; output order
/// matches input order.
pub fn extract_features_batch(graph: &ModelGraph, images: &[ImageU8]) -> Result<Vec<Vec<f64>>> {
    images
        .par_iter()
        .map(|im| extract_features(graph, im))
        .collect()
}

/// Class probabilities.
pub fn forward(graph: &ModelGraph, image: &ImageU8) -> Result<Vec<f64>> {
    let head = graph
        .head()
        .ok_or_else(|| Error::invalid("model has no classification head"))?;
    let features = extract_features(graph, image)?;
    softmax(&head_forward(&features, head)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTiming {
    pub index: usize,
    pub name: String,
    pub elapsed: Duration,
}

/// [`forward`] that also times each top-level layer (input binarization is
/// charged to layer 0, softmax to the head).
pub fn forward_profiled(
    graph: &ModelGraph,
    image: &ImageU8,
) -> Result<(Vec<f64>, Vec<LayerTiming>)> {
    check_image(graph, image)?;
    if graph.head().is_none() {
        return Err(Error::invalid("model has no classification head"));
    }
    let mut timings = Vec::with_capacity(graph.layers().len());
    let (.., threshold) = graph.input();
    let start = Instant::now();
    let mut act = Activation::Bits(binarize_input(image, threshold));
    let mut elapsed = start.elapsed();
    for (index, layer) in graph.layers().iter().enumerate() {
        let t = Instant::now();
        act = run_layer(layer, act)?;
        if let (LayerSpec::Head(_), Activation::Features(logits)) = (layer, &act) {
            act = Activation::Features(softmax(logits)?);
        }
        elapsed += t.elapsed();
        timings.push(LayerTiming {
            index,
            name: layer.describe(),
            elapsed,
        });
        elapsed = Duration::ZERO;
    }
    Ok((act.into_features()?, timings))
}
