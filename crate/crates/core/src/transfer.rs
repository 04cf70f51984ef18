//! Last-layer transfer learning: swap the head, train it by minibatch SGD on
//! cached frozen features, evaluate, and compare against a scratch run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::binlayer::{argmax, head_forward, FloatHead};
use crate::dataio::{ImageU8, LabeledDataset};
use crate::error::{Error, Result};
use crate::netgraph::{extract_features, LayerSpec, ModelGraph};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// L2 penalty on head weights (not bias).
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 5,
            seed: 42,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed as a degenerate no-op step
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::invalid(format!(
                "l2 must be finite and >= 0, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,train_loss,train_acc,val_acc,seconds";

impl TrainHistory {
    /// History carrying only validation accuracies (epochs 1..), e.g. for
    /// comparing runs recorded elsewhere.
    pub fn from_val_accuracies(val: &[f64]) -> Result<Self> {
        if let Some(v) = val.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("accuracy {v} outside [0, 1]")));
        }
        Ok(Self {
            records: val
                .iter()
                .enumerate()
                .map(|(i, &v)| EpochRecord {
                    epoch: i + 1,
                    train_loss: 0.0,
                    train_acc: 0.0,
                    val_acc: v,
                    seconds: 0.0,
                })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn val_accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.val_acc).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.3}",
                r.epoch, r.train_loss, r.train_acc, r.val_acc, r.seconds
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Row-major feature cache. Stored as f32 to halve memory; extractor
/// outputs lie in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f32>,
    dim: usize,
}

const EXTRACT_CHUNK: usize = 2048;

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::dim(format!(
                "feature rows of length {dim} and {}",
                r.len()
            )));
        }
        Ok(Self {
            data: rows.iter().flatten().map(|&x| x as f32).collect(),
            dim,
        })
    }

    /// Run the frozen extractor over `images`, in parallel chunks.
    pub fn extract(graph: &ModelGraph, images: &[ImageU8]) -> Result<Self> {
        let dim = graph
            .feature_len()
            .ok_or_else(|| Error::invalid("model has no feature stage"))?;
        let mut data = Vec::with_capacity(images.len() * dim);
        for chunk in images.chunks(EXTRACT_CHUNK) {
            let rows: Vec<Vec<f64>> = chunk
                .par_iter()
                .map(|im| extract_features(graph, im))
                .collect::<Result<_>>()?;
            data.extend(rows.iter().flatten().map(|&x| x as f32));
        }
        Ok(Self { data, dim })
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }
}

/// Same extractor, fresh zero-initialized head of `classes` outputs.
/// Labels are kept only if their count still matches.
pub fn replace_head(graph: &ModelGraph, classes: usize) -> Result<ModelGraph> {
    if classes == 0 {
        return Err(Error::invalid("head needs at least one class"));
    }
    let features = graph
        .feature_len()
        .ok_or_else(|| Error::invalid("model has no feature stage to attach a head to"))?;
    let (mut meta, mut layers) = graph.clone().into_parts();
    if graph.head().is_some() {
        layers.pop();
    }
    layers.push(LayerSpec::Head(FloatHead::zeros(classes, features)));
    if meta.labels.len() != classes {
        meta.labels.clear();
    }
    ModelGraph::new(meta, layers)
}

fn with_head(graph: &ModelGraph, head: FloatHead) -> Result<ModelGraph> {
    let (meta, mut layers) = graph.clone().into_parts();
    *layers.last_mut().expect("graph has a head") = LayerSpec::Head(head);
    ModelGraph::new(meta, layers)
}

fn require_head(graph: &ModelGraph) -> Result<&FloatHead> {
    graph
        .head()
        .ok_or_else(|| Error::invalid("model has no classification head"))
}

fn check_labels(labels: &[usize], classes: usize, what: &str) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::invalid(format!("{what} set is empty")));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::invalid(format!(
            "{what} item {i} has label {l}, head has {classes} classes"
        )));
    }
    Ok(())
}

/// Softmax cross-entropy of one example and its gradient with respect to
/// the row-major `weights` (classes × features) and `bias`.
pub fn xent_loss_grad(
    weights: &[f64],
    bias: &[f64],
    x: &[f64],
    label: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let classes = bias.len();
    let dim = x.len();
    if weights.len() != classes * dim || label >= classes {
        return Err(Error::dim(format!(
            "{} weights, {classes} classes, {dim} features, label {label}",
            weights.len()
        )));
    }
    let mut p: Vec<f64> = (0..classes)
        .map(|c| dot(&weights[c * dim..(c + 1) * dim], x) + bias[c])
        .collect();
    let loss = log_sum_exp(&p) - p[label];
    softmax_in_place(&mut p);
    p[label] -= 1.0;
    let mut gw = vec![0.0; weights.len()];
    for c in 0..classes {
        for (g, &xi) in gw[c * dim..(c + 1) * dim].iter_mut().zip(x) {
            *g = p[c] * xi;
        }
    }
    Ok((loss, gw, p))
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Mean cross-entropy and accuracy of `head` on cached features.
fn score(head: &FloatHead, feats: &FeatureMatrix, labels: &[usize]) -> Result<(f64, f64)> {
    let per: Vec<(f64, bool)> = (0..labels.len())
        .into_par_iter()
        .map(|i| {
            let logits = head_forward(&feats.row_f64(i), head)?;
            let pred = argmax(&logits).expect("non-empty logits");
            Ok((log_sum_exp(&logits) - logits[labels[i]], pred == labels[i]))
        })
        .collect::<Result<_>>()?;
    // fixed summation order keeps histories reproducible
    let loss = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let correct = per.iter().filter(|p| p.1).count();
    Ok((loss, correct as f64 / per.len() as f64))
}

/// Minibatch SGD on mean softmax cross-entropy, starting from `head`.
/// Weights train in f64; each epoch's metrics use the f32 head that would be
/// saved at that point.
pub fn fit_head(
    head: &FloatHead,
    train: (&FeatureMatrix, &[usize]),
    val: (&FeatureMatrix, &[usize]),
    cfg: &TrainConfig,
) -> Result<(FloatHead, TrainHistory)> {
    cfg.validate()?;
    let (classes, dim) = (head.classes(), head.features());
    let (xs, ys) = train;
    check_labels(ys, classes, "training")?;
    check_labels(val.1, classes, "validation")?;
    for (m, n, what) in [
        (xs, ys.len(), "training"),
        (val.0, val.1.len(), "validation"),
    ] {
        if m.rows() != n || m.dim() != dim {
            return Err(Error::dim(format!(
                "{what} features are {}x{}, expected {n}x{dim}",
                m.rows(),
                m.dim()
            )));
        }
    }

    let mut w: Vec<f64> = head.weights().iter().map(|&v| v as f64).collect();
    let mut b: Vec<f64> = head.bias().iter().map(|&v| v as f64).collect();
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; classes];
    let mut z = vec![0.0; classes];
    let mut x = vec![0.0; dim];
    let mut order: Vec<usize> = (0..ys.len()).collect();
    let mut rng = SplitMix64::new(cfg.seed);
    let mut history = TrainHistory::default();
    let mut snapshot = head.clone();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            gw.fill(0.0);
            gb.fill(0.0);
            for &i in batch {
                for (d, &s) in x.iter_mut().zip(xs.row(i)) {
                    *d = s as f64;
                }
                for c in 0..classes {
                    z[c] = dot(&w[c * dim..(c + 1) * dim], &x) + b[c];
                }
                softmax_in_place(&mut z);
                z[ys[i]] -= 1.0;
                for c in 0..classes {
                    let g = z[c];
                    if g != 0.0 {
                        for (acc, &xi) in gw[c * dim..(c + 1) * dim].iter_mut().zip(&x) {
                            *acc += g * xi;
                        }
                    }
                    gb[c] += g;
                }
            }
            let step = cfg.learning_rate / batch.len() as f64;
            let decay = cfg.learning_rate * cfg.l2;
            for (wi, gi) in w.iter_mut().zip(&gw) {
                *wi -= step * gi + decay * *wi;
            }
            for (bi, gi) in b.iter_mut().zip(&gb) {
                *bi -= step * gi;
            }
        }
        snapshot = FloatHead::new(
            classes,
            dim,
            w.iter().map(|&v| v as f32).collect(),
            b.iter().map(|&v| v as f32).collect(),
        )?;
        let (train_loss, train_acc) = score(&snapshot, xs, ys)?;
        let (_, val_acc) = score(&snapshot, val.0, val.1)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((snapshot, history))
}

/// Train only the head of `graph`; every other layer is left untouched.
pub fn train_head(
    graph: &ModelGraph,
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(ModelGraph, TrainHistory)> {
    cfg.validate()?;
    let head = require_head(graph)?;
    check_labels(train.labels(), head.classes(), "training")?;
    check_labels(val.labels(), head.classes(), "validation")?;
    let xs = FeatureMatrix::extract(graph, train.images())?;
    let vs = FeatureMatrix::extract(graph, val.images())?;
    let (head, history) = fit_head(head, (&xs, train.labels()), (&vs, val.labels()), cfg)?;
    Ok((with_head(graph, head)?, history))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Recall per true class; 0 for classes absent from the data.
    pub per_class: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
}

pub fn evaluate_features(
    head: &FloatHead,
    feats: &FeatureMatrix,
    labels: &[usize],
) -> Result<Evaluation> {
    let classes = head.classes();
    check_labels(labels, classes, "evaluation")?;
    if feats.rows() != labels.len() {
        return Err(Error::dim(format!(
            "{} feature rows for {} labels",
            feats.rows(),
            labels.len()
        )));
    }
    let preds: Vec<usize> = (0..labels.len())
        .into_par_iter()
        .map(|i| Ok(argmax(&head_forward(&feats.row_f64(i), head)?).expect("non-empty logits")))
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in labels.iter().zip(&preds) {
        confusion[t][p] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let per_class = (0..classes)
        .map(|c| {
            if support[c] == 0 {
                0.0
            } else {
                confusion[c][c] as f64 / support[c] as f64
            }
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        per_class,
        confusion,
        support,
    })
}

pub fn evaluate(graph: &ModelGraph, data: &LabeledDataset) -> Result<Evaluation> {
    let head = require_head(graph)?;
    check_labels(data.labels(), head.classes(), "evaluation")?;
    let feats = FeatureMatrix::extract(graph, data.images())?;
    evaluate_features(head, &feats, data.labels())
}

/// How an asymptote is read off a validation-accuracy curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Asymptote {
    #[default]
    Max,
    Last,
}

impl Asymptote {
    fn of(self, h: &TrainHistory) -> f64 {
        match self {
            Asymptote::Max => h
                .records
                .iter()
                .map(|r| r.val_acc)
                .fold(f64::NEG_INFINITY, f64::max),
            Asymptote::Last => h.records.last().expect("non-empty").val_acc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub jumpstart: f64,
    /// First epoch whose transfer validation accuracy reaches the threshold.
    pub time_to_threshold: Option<usize>,
    pub asymptote_transfer: f64,
    pub asymptote_scratch: f64,
    pub negative_transfer: bool,
}

pub fn transfer_metrics(
    transfer: &TrainHistory,
    scratch: &TrainHistory,
    threshold: f64,
) -> Result<TransferReport> {
    transfer_metrics_with(transfer, scratch, threshold, Asymptote::Max)
}

pub fn transfer_metrics_with(
    transfer: &TrainHistory,
    scratch: &TrainHistory,
    threshold: f64,
    asymptote: Asymptote,
) -> Result<TransferReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if transfer.is_empty() || scratch.is_empty() {
        return Err(Error::invalid("both histories need at least one epoch"));
    }
    let asymptote_transfer = asymptote.of(transfer);
    let asymptote_scratch = asymptote.of(scratch);
    Ok(TransferReport {
        jumpstart: transfer.records[0].val_acc - scratch.records[0].val_acc,
        time_to_threshold: transfer
            .records
            .iter()
            .find(|r| r.val_acc >= threshold)
            .map(|r| r.epoch),
        asymptote_transfer,
        asymptote_scratch,
        negative_transfer: asymptote_transfer < asymptote_scratch,
    })
}
