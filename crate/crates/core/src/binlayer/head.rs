use crate::error::{Error, Result};

/// Real-valued classifier on top of the binary feature extractor.
/// Weights are row-major `classes × features`, stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatHead {
    classes: usize,
    features: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl FloatHead {
    pub fn new(classes: usize, features: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weights.len() != classes * features || bias.len() != classes {
            return Err(Error::dim(format!(
                "head {classes}x{features} needs {} weights and {classes} biases, got {} and {}",
                classes * features,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("head parameters must be finite"));
        }
        Ok(Self {
            classes,
            features,
            weights,
            bias,
        })
    }

    pub fn zeros(classes: usize, features: usize) -> Self {
        Self {
            classes,
            features,
            weights: vec![0.0; classes * features],
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.weights[class * self.features..(class + 1) * self.features]
    }
}

pub fn head_forward(features: &[f64], head: &FloatHead) -> Result<Vec<f64>> {
    if features.len() != head.features {
        return Err(Error::dim(format!(
            "head expects {} features, got {}",
            head.features,
            features.len()
        )));
    }
    Ok((0..head.classes)
        .map(|c| {
            head.row(c)
                .iter()
                .zip(features)
                .map(|(&w, &x)| w as f64 * x)
                .sum::<f64>()
                + head.bias[c] as f64
        })
        .collect())
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid("softmax logits must be finite"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
