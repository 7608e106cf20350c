//! `vision`: command-line front end for the walking-assistance pipeline.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "vision",
    version,
    about = "Obstacle detection, monocular depth and spoken announcements"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-channel mean intensities of a set of PPM images.
    Stats(StatsArgs),
    /// Decode detection head files into filtered detections (JSON lines).
    Detect(DetectArgs),
    /// Estimate disparity and depth for one image.
    Depth(DepthArgs),
    /// Full run: detections, depth, nearby obstacles and the announcement.
    Assist(AssistArgs),
    /// Train the right-view synthesis network.
    TrainSynth(TrainArgs),
    /// Train the stereo matching network.
    TrainMatcher(TrainMatcherArgs),
    /// Anchor box counts per stride.
    Census(CensusArgs),
    /// Write synthetic stereo pairs with ground-truth disparity.
    SynthData(SynthDataArgs),
    /// Write or check the audio clip catalog for a class list.
    Catalog(CatalogArgs),
}

#[derive(Args)]
struct StatsArgs {
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Write the 4-line stats file here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Settings shared with the `key = value` config file. Flags override the
/// file.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    conf_threshold: Option<f64>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    anchors: Option<PathBuf>,
    #[arg(long)]
    classes: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Detection head file for a stride, as `STRIDE=PATH`; repeatable.
    #[arg(long = "head", value_name = "STRIDE=PATH")]
    heads: Vec<String>,
    #[arg(long)]
    baseline_m: Option<f64>,
    #[arg(long)]
    focal_px: Option<f64>,
    #[arg(long)]
    depth_height: Option<usize>,
    #[arg(long)]
    depth_width: Option<usize>,
    #[arg(long)]
    synth_arch: Option<PathBuf>,
    #[arg(long)]
    matcher_arch: Option<PathBuf>,
    #[arg(long)]
    synth_weights: Option<PathBuf>,
    #[arg(long)]
    matcher_weights: Option<PathBuf>,
    #[arg(long)]
    audio_catalog: Option<PathBuf>,
    #[arg(long)]
    near_threshold_m: Option<f64>,
    #[arg(long)]
    max_announced: Option<usize>,
    /// Seed for untrained weights; defaults to $VISION_SEED, then 42.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Report boxes in this image's pixels instead of the network input's.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DepthArgs {
    image: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for disparity.bin, depth.bin and depth.pgm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecutionArg {
    Concurrent,
    DetectorFirst,
    DepthFirst,
}

#[derive(Args)]
struct AssistArgs {
    image: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory for the run's artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "concurrent")]
    execution: ExecutionArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args)]
struct TrainArgs {
    /// Stereo directory (`left/`, `right/`, `disparity/`).
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generate this many synthetic pairs instead of reading `--data`.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Defaults to the network's standard plan.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0.0003)]
    lr: f64,
    #[arg(long, default_value_t = 1e-6)]
    weight_decay: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: OptimizerArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Weights file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the architecture as JSON, for `--synth-arch`/`--matcher-arch`.
    #[arg(long)]
    arch_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainMatcherArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Synthetic pairs with one uniform shift each, e.g. `4,8,12,16`.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["data", "synthetic"])]
    uniform_shifts: Vec<usize>,
    /// Train on right views synthesized by these weights.
    #[arg(long, requires = "synth_arch")]
    synth_weights: Option<PathBuf>,
    #[arg(long)]
    synth_arch: Option<PathBuf>,
}

#[derive(Args)]
struct CensusArgs {
    #[arg(long, default_value_t = 416)]
    input_size: usize,
    #[arg(long, default_value_t = 3)]
    boxes: usize,
    #[arg(long, value_delimiter = ',', default_value = "32,16,8")]
    strides: Vec<usize>,
}

#[derive(Args)]
struct SynthDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 2)]
    background_disparity: usize,
    #[arg(long, default_value_t = 16)]
    max_disparity: usize,
    #[arg(long, default_value_t = 3)]
    rectangles: usize,
    #[arg(long, default_value_t = 0.1)]
    grain: f32,
    /// Every pair is one texture shifted by this many pixels.
    #[arg(long)]
    uniform_shift: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CatalogArgs {
    /// Catalog directory.
    #[arg(long)]
    dir: PathBuf,
    /// One class per line; the COCO classes when absent.
    #[arg(long)]
    classes: Option<PathBuf>,
    /// Report missing clips instead of writing placeholders.
    #[arg(long)]
    check: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
