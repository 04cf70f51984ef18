//! Human and JSON renderings of subcommand results.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{Map, Value};

use binnet_core::throughput::{BenchReport, FoldingPlan};
use binnet_core::transfer::{EpochRecord, TrainHistory};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub path: String,
    pub name: String,
    pub layers: usize,
    pub input: [usize; 3],
    pub features: Option<usize>,
    pub classes: Option<usize>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class: usize,
    pub label: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: usize,
    pub label: String,
    pub accuracy: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassRow>,
    pub confusion: Vec<Vec<usize>>,
    pub frames: usize,
    pub test_seconds: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRow {
    pub label: String,
    pub class_id: usize,
    pub score: f64,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub model: ModelSummary,
    pub train_items: usize,
    pub val_items: usize,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    Convert(ModelSummary),
    Preset(ModelSummary),
    Infer(Vec<Prediction>),
    TrainHead(TrainReport),
    Eval(EvalReport),
    Detect(Vec<DetectionRow>),
    Plan(FoldingPlan),
    Bench(BenchReport),
}

impl Report {
    fn command(&self) -> &'static str {
        match self {
            Report::Convert(_) => "convert",
            Report::Preset(_) => "preset",
            Report::Infer(_) => "infer",
            Report::TrainHead(_) => "train-head",
            Report::Eval(_) => "eval",
            Report::Detect(_) => "detect",
            Report::Plan(_) => "plan",
            Report::Bench(_) => "bench",
        }
    }
}

/// Render `report` for stdout.
pub fn emit_report(report: &Report, json: bool) -> String {
    if json {
        emit_json(report)
    } else {
        emit_text(report)
    }
}

fn emit_json(report: &Report) -> String {
    let body = match report {
        Report::Convert(m) | Report::Preset(m) => to_value("model", m),
        Report::Infer(p) => to_value("predictions", p),
        Report::TrainHead(t) => serde_json::to_value(t).expect("serializable"),
        Report::Eval(e) => serde_json::to_value(e).expect("serializable"),
        Report::Detect(d) => to_value("detections", d),
        Report::Plan(p) => serde_json::to_value(p).expect("serializable"),
        Report::Bench(b) => serde_json::to_value(b).expect("serializable"),
    };
    let mut obj = match body {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("result".into(), other);
            m
        }
    };
    obj.insert("schema_version".into(), SCHEMA_VERSION.into());
    obj.insert("command".into(), report.command().into());
    let mut s = serde_json::to_string_pretty(&Value::Object(obj)).expect("serializable");
    s.push('\n');
    s
}

fn to_value<T: Serialize>(key: &str, v: &T) -> Value {
    let mut m = Map::new();
    m.insert(key.into(), serde_json::to_value(v).expect("serializable"));
    Value::Object(m)
}

fn emit_text(report: &Report) -> String {
    let mut s = String::new();
    match report {
        Report::Convert(m) | Report::Preset(m) => {
            let _ = writeln!(s, "wrote {}", m.path);
            let _ = writeln!(
                s,
                "name      {}",
                if m.name.is_empty() { "-" } else { &m.name }
            );
            let _ = writeln!(s, "layers    {}", m.layers);
            let _ = writeln!(s, "input     {}x{}x{}", m.input[0], m.input[1], m.input[2]);
            if let Some(f) = m.features {
                let _ = writeln!(s, "features  {f}");
            }
            if let Some(c) = m.classes {
                let _ = writeln!(s, "classes   {c}");
            }
        }
        Report::Infer(preds) => {
            for p in preds {
                let _ = writeln!(s, "{} {:.4}", p.label, p.probability);
            }
        }
        Report::TrainHead(t) => {
            s.push_str(&history_table(&t.history.records));
            let _ = writeln!(
                s,
                "trained on {} items, validated on {}; wrote {}",
                t.train_items, t.val_items, t.model.path
            );
        }
        Report::Eval(e) => s.push_str(&eval_table(e)),
        Report::Detect(dets) => {
            for d in dets {
                let _ = writeln!(
                    s,
                    "{} {:.4} {} {} {} {}",
                    d.label, d.score, d.x, d.y, d.w, d.h
                );
            }
        }
        Report::Plan(p) => s.push_str(&p.to_csv()),
        Report::Bench(b) => s.push_str(&b.shares_csv()),
    }
    s
}

fn history_table(records: &[EpochRecord]) -> String {
    let mut s = format!(
        "{:>5}  {:>10}  {:>9}  {:>9}  {:>8}\n",
        "epoch", "train_loss", "train_acc", "val_acc", "seconds"
    );
    for r in records {
        let _ = writeln!(
            s,
            "{:>5}  {:>10.4}  {:>9.4}  {:>9.4}  {:>8.2}",
            r.epoch, r.train_loss, r.train_acc, r.val_acc, r.seconds
        );
    }
    s
}

/// Per-class rows, an overall row and a speed footer.
fn eval_table(e: &EvalReport) -> String {
    let width = e
        .per_class
        .iter()
        .map(|r| r.label.chars().count())
        .chain(["overall".len(), "class".len()])
        .max()
        .unwrap_or(7);
    let mut s = format!("{:<width$}  {:>8}  {:>7}\n", "class", "accuracy", "support");
    for r in &e.per_class {
        let _ = writeln!(
            s,
            "{:<width$}  {:>8.4}  {:>7}",
            r.label, r.accuracy, r.support
        );
    }
    let _ = writeln!(
        s,
        "{:<width$}  {:>8.4}  {:>7}",
        "overall", e.accuracy, e.frames
    );
    let _ = writeln!(s, "FPS {:.1}  test time {:.3} s", e.fps, e.test_seconds);
    s
}
