//! Dataflow throughput model and wall-clock benchmarking.
//!
//! Each layer gets its own compute unit doing `p` MACs per cycle, so a frame
//! spends `ceil(ops / p)` cycles in that layer and the pipeline runs at
//! `clock / max_l ceil(ops_l / p_l)` frames per second.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::dataio::ImageU8;
use crate::error::{Error, Result};
use crate::netgraph::{forward_profiled, ActShape, LayerShape, LayerSpec, ModelGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerOps {
    /// Position in this list.
    pub index: usize,
    /// Tree path, as in the graph's shape report.
    pub path: String,
    pub name: String,
    /// Binary (or, for the head, real) multiply-accumulates per frame.
    pub ops: u64,
    /// Element operations of thresholds and pools; not part of MAC cycles.
    pub elementwise: u64,
}

/// Per-layer op counts in execution order, one entry per conv, dense,
/// threshold, pool and head layer (branch contents included; the input,
/// branch container and concat do no work).
///
/// * conv: `out_c · out_h · out_w · in_c · kh · kw` MACs
/// * dense: `rows · cols` MACs; head: `classes · features` MACs
/// * threshold and global average pool: one element op per input element
/// * max pool: `k²` element ops per output element
pub fn count_ops(graph: &ModelGraph) -> Vec<LayerOps> {
    let shapes: std::collections::HashMap<&str, &LayerShape> = graph
        .report()
        .layers
        .iter()
        .map(|l| (l.path.as_str(), l))
        .collect();
    let mut out = Vec::new();
    walk(graph.layers(), "", &shapes, &mut out);
    out
}

fn walk(
    layers: &[LayerSpec],
    prefix: &str,
    shapes: &std::collections::HashMap<&str, &LayerShape>,
    out: &mut Vec<LayerOps>,
) {
    for (i, layer) in layers.iter().enumerate() {
        let path = format!("{prefix}{i}");
        let shape = shapes[path.as_str()];
        let len = |s: &ActShape| s.len() as u64;
        let (ops, elementwise) = match layer {
            LayerSpec::Input { .. } | LayerSpec::Concat => continue,
            LayerSpec::Branches(branches) => {
                for (b, seq) in branches.iter().enumerate() {
                    walk(seq, &format!("{path}.{b}."), shapes, out);
                }
                continue;
            }
            LayerSpec::BinConv(w) => (len(&shape.output) * w.fan_in() as u64, 0),
            LayerSpec::BinDense(w) => ((w.rows() * w.cols()) as u64, 0),
            LayerSpec::Head(h) => ((h.classes() * h.features()) as u64, 0),
            LayerSpec::Threshold(_) | LayerSpec::GlobalAvgPool => (0, len(&shape.input)),
            LayerSpec::MaxPool { kernel, .. } => (0, len(&shape.output) * (kernel * kernel) as u64),
        };
        out.push(LayerOps {
            index: out.len(),
            path,
            name: layer.describe(),
            ops,
            elementwise,
        });
    }
}

fn check_clock(clock_hz: f64) -> Result<()> {
    if !(clock_hz.is_finite() && clock_hz > 0.0) {
        return Err(Error::invalid(format!(
            "clock must be finite and > 0, got {clock_hz}"
        )));
    }
    Ok(())
}

/// Pipeline FPS for raw op counts. A pipeline with no MAC work at all is
/// unbounded (`f64::INFINITY`).
pub fn fps_for_counts(ops: &[u64], parallelism: &[u64], clock_hz: f64) -> Result<f64> {
    check_clock(clock_hz)?;
    if ops.is_empty() {
        return Err(Error::invalid("no layers to schedule"));
    }
    if ops.len() != parallelism.len() {
        return Err(Error::dim(format!(
            "{} layers but {} parallelism entries",
            ops.len(),
            parallelism.len()
        )));
    }
    if parallelism.contains(&0) {
        return Err(Error::invalid("parallelism must be at least 1"));
    }
    let slowest = ops
        .iter()
        .zip(parallelism)
        .map(|(&o, &p)| o.div_ceil(p))
        .max()
        .expect("non-empty");
    Ok(if slowest == 0 {
        f64::INFINITY
    } else {
        clock_hz / slowest as f64
    })
}

pub fn attainable_fps(ops: &[LayerOps], parallelism: &[u64], clock_hz: f64) -> Result<f64> {
    fps_for_counts(&counts(ops), parallelism, clock_hz)
}

fn counts(ops: &[LayerOps]) -> Vec<u64> {
    ops.iter().map(|l| l.ops).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanRow {
    pub layer: usize,
    pub name: String,
    pub ops: u64,
    pub p: u64,
    pub cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldingPlan {
    pub rows: Vec<PlanRow>,
    pub clock_hz: f64,
    pub fps_target: f64,
    pub attained_fps: f64,
    /// Single-frame latency if layers ran back to back.
    pub latency_cycles: u64,
    pub latency_seconds: f64,
}

impl FoldingPlan {
    pub fn parallelism(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.p).collect()
    }

    /// `layer,name,ops,p,cycles`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,name,ops,p,cycles\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.layer,
                csv_field(&r.name),
                r.ops,
                r.p,
                r.cycles
            );
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Largest per-layer cycle count that still meets `fps_target`, checked in
/// the same floating-point arithmetic [`fps_for_counts`] uses.
fn cycle_budget(fps_target: f64, clock_hz: f64) -> u64 {
    let meets = |b: u64| b == 0 || clock_hz / b as f64 >= fps_target;
    let mut b = (clock_hz / fps_target).floor() as u64;
    while b > 0 && !meets(b) {
        b -= 1;
    }
    while b < u64::MAX && meets(b + 1) {
        b += 1;
    }
    b
}

/// Minimal per-layer parallelism meeting `fps_target`.
///
/// With a cycle budget `B = floor(clock / target)` a layer meets the target
/// iff `ceil(ops / p) <= B`, so the least such `p` is `max(1, ceil(ops / B))`.
/// Layers whose requirement exceeds their cap (or any layer with work when
/// even a single cycle is too slow) make the plan infeasible.
pub fn plan_folding(
    ops: &[LayerOps],
    fps_target: f64,
    clock_hz: f64,
    caps: Option<&[u64]>,
) -> Result<FoldingPlan> {
    check_clock(clock_hz)?;
    if !(fps_target.is_finite() && fps_target > 0.0) {
        return Err(Error::invalid(format!(
            "FPS target must be finite and > 0, got {fps_target}"
        )));
    }
    if ops.is_empty() {
        return Err(Error::invalid("no layers to schedule"));
    }
    if let Some(c) = caps {
        if c.len() != ops.len() {
            return Err(Error::dim(format!(
                "{} layers but {} caps",
                ops.len(),
                c.len()
            )));
        }
    }
    let budget = cycle_budget(fps_target, clock_hz);
    let mut rows = Vec::with_capacity(ops.len());
    for (i, l) in ops.iter().enumerate() {
        let cap = caps.map_or(u64::MAX, |c| c[i]);
        let p = match (l.ops, budget) {
            (0, _) => 1,
            (_, 0) => {
                return Err(Error::Infeasible {
                    layer: i,
                    name: l.name.clone(),
                    required: u64::MAX,
                    cap,
                })
            }
            (o, b) => o.div_ceil(b).max(1),
        };
        if p > cap {
            return Err(Error::Infeasible {
                layer: i,
                name: l.name.clone(),
                required: p,
                cap,
            });
        }
        rows.push(PlanRow {
            layer: i,
            name: l.name.clone(),
            ops: l.ops,
            p,
            cycles: l.ops.div_ceil(p),
        });
    }
    let parallelism: Vec<u64> = rows.iter().map(|r| r.p).collect();
    let attained_fps = attainable_fps(ops, &parallelism, clock_hz)?;
    let latency_cycles = rows
        .iter()
        .map(|r| r.cycles)
        .fold(0u64, u64::saturating_add);
    Ok(FoldingPlan {
        rows,
        clock_hz,
        fps_target,
        attained_fps,
        latency_cycles,
        latency_seconds: latency_cycles as f64 / clock_hz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerShare {
    pub layer: usize,
    pub name: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    /// Wall seconds of each repetition over all frames.
    pub seconds: Vec<f64>,
    pub median_fps: f64,
    /// Share of measured layer time per top-level layer.
    pub shares: Vec<LayerShare>,
}

impl BenchReport {
    /// `layer,share`.
    pub fn shares_csv(&self) -> String {
        let mut s = String::from("layer,share\n");
        for l in &self.shares {
            let _ = writeln!(s, "{},{:.6}", l.layer, l.share);
        }
        s
    }

    /// Median seconds to classify every frame once.
    pub fn median_seconds(&self) -> f64 {
        median(&self.seconds)
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

pub const MIN_REPETITIONS: usize = 3;

/// Classify every image `repetitions` times on the calling thread.
pub fn bench_fps(
    graph: &ModelGraph,
    images: &[ImageU8],
    repetitions: usize,
) -> Result<BenchReport> {
    if images.is_empty() {
        return Err(Error::invalid("benchmark needs at least one image"));
    }
    if repetitions < MIN_REPETITIONS {
        return Err(Error::invalid(format!(
            "benchmark needs at least {MIN_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    let mut per_layer = vec![Duration::ZERO; graph.layers().len()];
    let mut seconds = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        for im in images {
            let (_, timings) = forward_profiled(graph, im)?;
            for t in timings {
                per_layer[t.index] += t.elapsed;
            }
        }
        seconds.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    let total: f64 = per_layer.iter().map(Duration::as_secs_f64).sum();
    let n = per_layer.len() as f64;
    let shares = per_layer
        .iter()
        .zip(graph.layers())
        .enumerate()
        .map(|(layer, (d, spec))| LayerShare {
            layer,
            name: spec.describe(),
            share: if total > 0.0 {
                d.as_secs_f64() / total
            } else {
                1.0 / n
            },
        })
        .collect();
    Ok(BenchReport {
        frames: images.len(),
        median_fps: images.len() as f64 / median(&seconds),
        seconds,
        shares,
    })
}
