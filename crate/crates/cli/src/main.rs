//! `binnet`: convert, run, train, evaluate, plan and benchmark binarized
//! networks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "binnet",
    version,
    about = "Bit-packed binarized neural network toolkit"
)]
pub struct Cli {
    /// Worker threads for feature extraction and detection [default: available cores]
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Emit structured JSON instead of tables/CSV
    #[arg(long, global = true)]
    pub json: bool,

    /// Seed for every random choice (shuffles, splits, preset weights)
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a float TOML manifest into a BNNM model file
    Convert {
        /// Input manifest (TOML)
        #[arg(long)]
        manifest: PathBuf,
        /// Output model file
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a model from a named preset with random binary weights and a zero head
    Preset {
        /// Preset to build
        #[arg(value_enum)]
        name: PresetName,
        /// Number of output classes
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Input shape as CxHxW (ignored by `googlenet`, which is 3x224x224)
        #[arg(long, default_value = "1x28x28")]
        input: String,
        /// Output model file
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one PGM/PPM image
    Infer {
        /// BNNM model file
        #[arg(long)]
        model: PathBuf,
        /// Binary PGM (P5) or PPM (P6) image
        #[arg(long)]
        image: PathBuf,
        /// Number of classes to list
        #[arg(long, default_value_t = 1)]
        top: usize,
    },
    /// Train only the classification head on frozen features
    TrainHead(TrainHeadArgs),
    /// Accuracy, per-class accuracy and speed on a labelled dataset
    Eval {
        /// BNNM model file
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Sliding-window detection on one PGM/PPM image
    Detect(DetectArgs),
    /// Folding plan meeting an FPS target at a clock frequency
    Plan {
        /// BNNM model file
        #[arg(long)]
        model: PathBuf,
        /// Target frames per second
        #[arg(long)]
        fps: f64,
        /// Clock frequency in Hz
        #[arg(long, default_value_t = 1e8)]
        clock: f64,
        /// Comma-separated per-layer parallelism caps, one per counted layer
        #[arg(long, value_delimiter = ',')]
        caps: Option<Vec<u64>>,
    },
    /// Measure wall-clock FPS and per-layer time shares
    Bench {
        /// BNNM model file
        #[arg(long)]
        model: PathBuf,
        /// IDX image file to draw frames from
        #[arg(long, conflicts_with = "image")]
        images: Option<PathBuf>,
        /// PGM/PPM frame (repeatable)
        #[arg(long)]
        image: Vec<PathBuf>,
        /// Use at most this many frames from --images
        #[arg(long, default_value_t = 100)]
        limit: usize,
        /// Timed passes over the frames (at least 3)
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    /// Linear probe: binarized pixels straight into the head
    Linear,
    /// 22-layer inception network at 1/8 width with a light stem
    MiniGooglenet,
    /// Full-width 22-layer inception network on 3x224x224 input
    Googlenet,
}

/// A labelled dataset: IDX images + labels (MNIST layout) or CIFAR-10 batches.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// IDX image file
    #[arg(long, requires = "labels", conflicts_with = "cifar")]
    pub images: Option<PathBuf>,
    /// IDX label file
    #[arg(long, requires = "images")]
    pub labels: Option<PathBuf>,
    /// CIFAR-10 binary batch file (repeatable)
    #[arg(long)]
    pub cifar: Vec<PathBuf>,
    /// Use only the first N items
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    /// BNNM model whose extractor stays frozen
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Validation IDX image file [default: hold out --val-fraction of the training data]
    #[arg(long, requires = "val_labels")]
    pub val_images: Option<PathBuf>,
    /// Validation IDX label file
    #[arg(long, requires = "val_images")]
    pub val_labels: Option<PathBuf>,
    /// Share of training data held out for validation when no validation files are given
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    /// Learning rate
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Minibatch size
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Passes over the training data
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// L2 penalty on head weights
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    /// Start from a zero head even if the model's head already fits the data
    #[arg(long)]
    pub fresh_head: bool,
    /// Add this many background-augmented samples (jittered objects, blanks
    /// and off-centre shifts) and a `background` class, for detection [default: 0 = off]
    #[arg(long, default_value_t = 0)]
    pub background_samples: usize,
    /// Output model file
    #[arg(long)]
    pub out: PathBuf,
    /// Write the per-epoch history as CSV
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// BNNM model file
    #[arg(long)]
    pub model: PathBuf,
    /// Binary PGM (P5) or PPM (P6) image
    #[arg(long)]
    pub image: PathBuf,
    /// Window step in pixels
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Minimum top-class probability for a detection
    #[arg(long, default_value_t = 0.5)]
    pub min_prob: f64,
    /// Comma-separated downscale factors, each >= 1
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub scales: Vec<f64>,
    /// IoU above which same-class boxes are suppressed
    #[arg(long, default_value_t = 0.3)]
    pub nms_iou: f64,
    /// Background class, by index or label [default: the class labelled `background`, if any]
    #[arg(long)]
    pub background: Option<String>,
    /// Treat every class as an object, even one labelled `background`
    #[arg(long, conflicts_with = "background")]
    pub no_background: bool,
    /// Write a copy of the image with detection outlines
    #[arg(long)]
    pub annotate: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<binnet_core::Error> for Failure {
    fn from(e: binnet_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {}", one_line(&msg));
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::from(2)
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
