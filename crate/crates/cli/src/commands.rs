use std::path::Path;
use std::time::Instant;

use anyhow::Context;

use binnet_core::binlayer::FloatHead;
use binnet_core::dataio::{
    load_cifar10, load_image, load_mnist, parse_idx_images, save_image, split_shuffle, ImageU8,
    LabeledDataset,
};
use binnet_core::detect::{
    annotate, background_augmented, detect_objects, BackgroundAugment, DetectConfig,
    BACKGROUND_LABEL,
};
use binnet_core::netgraph::{
    convert, forward, full_googlenet, load_model, mini_googlenet, save_model, LayerSpec, Metadata,
    ModelGraph, DEFAULT_INPUT_THRESHOLD,
};
use binnet_core::throughput::{bench_fps, count_ops, plan_folding};
use binnet_core::transfer::{evaluate, replace_head, train_head, TrainConfig};

use crate::report::{
    emit_report, ClassRow, DetectionRow, EvalReport, ModelSummary, Prediction, Report, TrainReport,
};
use crate::{Cli, Command, DataArgs, DetectArgs, Failure, PresetName, TrainHeadArgs};

type Outcome<T> = Result<T, Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

pub fn run(cli: &Cli) -> Outcome<String> {
    let report = match &cli.command {
        Command::Convert { manifest, out } => {
            let graph =
                convert(manifest).with_context(|| format!("converting {}", manifest.display()))?;
            save(&graph, out)?;
            Report::Convert(summary(&graph, out))
        }
        Command::Preset {
            name,
            classes,
            input,
            out,
        } => {
            let graph = preset(*name, *classes, input, cli.seed)?;
            save(&graph, out)?;
            Report::Preset(summary(&graph, out))
        }
        Command::Infer { model, image, top } => {
            if *top == 0 {
                return Err(usage("--top must be at least 1"));
            }
            let graph = load(model)?;
            let img = load_image(image).with_context(|| format!("reading {}", image.display()))?;
            let probs = forward(&graph, &img)?;
            let mut order: Vec<usize> = (0..probs.len()).collect();
            // stable sort keeps the lowest index first among ties
            order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
            Report::Infer(
                order
                    .into_iter()
                    .take(*top)
                    .map(|c| Prediction {
                        class: c,
                        label: graph.label(c),
                        probability: probs[c],
                    })
                    .collect(),
            )
        }
        Command::TrainHead(args) => Report::TrainHead(train(args, cli.seed)?),
        Command::Eval { model, data } => {
            let graph = load(model)?;
            let data =
                load_data(data)?.ok_or_else(|| usage("eval needs --images/--labels or --cifar"))?;
            let start = Instant::now();
            let e = evaluate(&graph, &data)?;
            let seconds = start.elapsed().as_secs_f64();
            Report::Eval(EvalReport {
                accuracy: e.accuracy,
                per_class: e
                    .per_class
                    .iter()
                    .enumerate()
                    .map(|(c, &accuracy)| ClassRow {
                        class: c,
                        label: graph.label(c),
                        accuracy,
                        support: e.support[c],
                    })
                    .collect(),
                confusion: e.confusion,
                frames: data.len(),
                test_seconds: seconds,
                fps: data.len() as f64 / seconds.max(f64::MIN_POSITIVE),
            })
        }
        Command::Detect(args) => Report::Detect(detect(args)?),
        Command::Plan {
            model,
            fps,
            clock,
            caps,
        } => {
            if !(fps.is_finite() && *fps > 0.0) || !(clock.is_finite() && *clock > 0.0) {
                return Err(usage("--fps and --clock must be finite and positive"));
            }
            let graph = load(model)?;
            let ops = count_ops(&graph);
            if ops.is_empty() {
                return Err(Failure::Data(anyhow::anyhow!(
                    "model has no compute layers to plan"
                )));
            }
            if let Some(c) = caps {
                if c.len() != ops.len() {
                    return Err(usage(format!(
                        "--caps lists {} values, model has {} counted layers",
                        c.len(),
                        ops.len()
                    )));
                }
            }
            let plan = plan_folding(&ops, *fps, *clock, caps.as_deref())?;
            if !cli.json {
                eprintln!(
                    "attained {:.3} fps (target {}), single-frame latency {} cycles = {:.6} s",
                    plan.attained_fps, plan.fps_target, plan.latency_cycles, plan.latency_seconds
                );
            }
            Report::Plan(plan)
        }
        Command::Bench {
            model,
            images,
            image,
            limit,
            repetitions,
        } => {
            if *repetitions < binnet_core::throughput::MIN_REPETITIONS {
                return Err(usage(format!(
                    "--repetitions must be at least {}",
                    binnet_core::throughput::MIN_REPETITIONS
                )));
            }
            let graph = load(model)?;
            let frames: Vec<ImageU8> = match images {
                Some(p) => {
                    let bytes =
                        std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                    let mut v = parse_idx_images(&bytes)
                        .with_context(|| format!("parsing {}", p.display()))?;
                    v.truncate(*limit);
                    v
                }
                None if image.is_empty() => return Err(usage("bench needs --images or --image")),
                None => image
                    .iter()
                    .map(|p| load_image(p).with_context(|| format!("reading {}", p.display())))
                    .collect::<anyhow::Result<_>>()?,
            };
            let r = bench_fps(&graph, &frames, *repetitions)?;
            if !cli.json {
                eprintln!(
                    "{} frames x {} repetitions: median {:.1} fps, {:.4} s per pass",
                    r.frames,
                    repetitions,
                    r.median_fps,
                    r.median_seconds()
                );
            }
            Report::Bench(r)
        }
    };
    Ok(emit_report(&report, cli.json))
}

fn load(path: &Path) -> Outcome<ModelGraph> {
    Ok(load_model(path).with_context(|| format!("loading {}", path.display()))?)
}

fn save(graph: &ModelGraph, path: &Path) -> Outcome<()> {
    Ok(save_model(graph, path).with_context(|| format!("writing {}", path.display()))?)
}

fn summary(graph: &ModelGraph, path: &Path) -> ModelSummary {
    let (c, h, w, _) = graph.input();
    ModelSummary {
        path: path.display().to_string(),
        name: graph.meta().name.clone(),
        layers: graph.layers().len(),
        input: [c, h, w],
        features: graph.feature_len(),
        classes: graph.head().map(FloatHead::classes),
        labels: graph.meta().labels.clone(),
    }
}

fn parse_shape(s: &str) -> Outcome<(usize, usize, usize)> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("input shape must look like 1x28x28, got {s:?}")))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(usage(format!(
            "input shape must be three positive sizes CxHxW, got {s:?}"
        ))),
    }
}

fn preset(name: PresetName, classes: usize, input: &str, seed: u64) -> Outcome<ModelGraph> {
    if classes == 0 {
        return Err(usage("--classes must be at least 1"));
    }
    let shape = parse_shape(input)?;
    Ok(match name {
        PresetName::Linear => {
            let (c, h, w) = shape;
            ModelGraph::new(
                Metadata {
                    name: "linear".into(),
                    labels: vec![],
                },
                vec![
                    LayerSpec::Input {
                        channels: c,
                        height: h,
                        width: w,
                        threshold: DEFAULT_INPUT_THRESHOLD,
                    },
                    LayerSpec::Head(FloatHead::zeros(classes, c * h * w)),
                ],
            )?
        }
        PresetName::MiniGooglenet => mini_googlenet(shape, classes, seed)?,
        PresetName::Googlenet => full_googlenet(classes, seed)?,
    })
}

fn load_data(args: &DataArgs) -> Outcome<Option<LabeledDataset>> {
    let data = match (&args.images, &args.labels) {
        (Some(images), Some(labels)) => load_mnist(images, labels)
            .with_context(|| format!("loading {} / {}", images.display(), labels.display()))?,
        _ if !args.cifar.is_empty() => {
            load_cifar10(&args.cifar).context("loading CIFAR-10 batches")?
        }
        _ => return Ok(None),
    };
    Ok(Some(match args.limit {
        Some(n) => data.take(n),
        None => data,
    }))
}

fn train(args: &TrainHeadArgs, seed: u64) -> Outcome<TrainReport> {
    let cfg = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed,
        l2: args.l2,
    };
    cfg.validate().map_err(usage)?;
    let graph = load(&args.model)?;
    let data = load_data(&args.data)?
        .ok_or_else(|| usage("train-head needs --images/--labels or --cifar"))?;
    let (train, val) = match (&args.val_images, &args.val_labels) {
        (Some(i), Some(l)) => {
            let val = load_mnist(i, l)
                .with_context(|| format!("loading {} / {}", i.display(), l.display()))?;
            (data, val)
        }
        _ => {
            if !(args.val_fraction > 0.0 && args.val_fraction < 1.0) {
                return Err(usage("--val-fraction must lie in (0, 1)"));
            }
            split_shuffle(&data, 1.0 - args.val_fraction, seed)?
        }
    };
    let (train, val) = if args.background_samples > 0 {
        let aug = BackgroundAugment {
            samples: args.background_samples,
            ..Default::default()
        };
        let val_aug = BackgroundAugment {
            samples: val.len().max(1),
            ..aug.clone()
        };
        (
            background_augmented(&train, &aug, seed)?,
            background_augmented(&val, &val_aug, seed ^ 0x5eed)?,
        )
    } else {
        (train, val)
    };

    let classes = train.classes().max(val.classes());
    let graph = match graph.head() {
        Some(h) if !args.fresh_head && h.classes() >= classes => graph,
        _ => replace_head(&graph, classes)?,
    };
    let (mut trained, history) = train_head(&graph, &train, &val, &cfg)?;
    if let Some(names) = train.class_names() {
        if names.len() == trained.head().expect("trained head").classes() {
            trained = trained.with_labels(names.to_vec())?;
        }
    }
    save(&trained, &args.out)?;
    if let Some(p) = &args.history {
        history
            .write_csv(p)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(TrainReport {
        model: summary(&trained, &args.out),
        train_items: train.len(),
        val_items: val.len(),
        history,
    })
}

fn detect(args: &DetectArgs) -> Outcome<Vec<DetectionRow>> {
    let graph = load(&args.model)?;
    let classes = graph.head().map(FloatHead::classes).ok_or_else(|| {
        Failure::Data(anyhow::anyhow!(
            "detection needs a model with a classification head"
        ))
    })?;
    let background_class = if args.no_background {
        None
    } else {
        match &args.background {
            Some(b) => Some(match b.parse::<usize>() {
                Ok(i) if i < classes => i,
                Ok(i) => {
                    return Err(usage(format!(
                        "--background {i} is not among {classes} classes"
                    )))
                }
                Err(_) => graph
                    .meta()
                    .labels
                    .iter()
                    .position(|l| l == b)
                    .ok_or_else(|| usage(format!("no class labelled {b:?}")))?,
            }),
            None => graph
                .meta()
                .labels
                .iter()
                .position(|l| l == BACKGROUND_LABEL),
        }
    };
    let cfg = DetectConfig {
        stride: args.stride,
        min_prob: args.min_prob,
        scales: args.scales.clone(),
        nms_iou: args.nms_iou,
        background_class,
    };
    cfg.validate().map_err(usage)?;
    let img =
        load_image(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let dets = detect_objects(&graph, &img, &cfg)?;
    if let Some(p) = &args.annotate {
        save_image(&annotate(&img, &dets), p)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(dets
        .into_iter()
        .map(|d| DetectionRow {
            label: graph.label(d.class_id),
            class_id: d.class_id,
            score: d.score,
            x: d.x,
            y: d.y,
            w: d.w,
            h: d.h,
        })
        .collect())
}
