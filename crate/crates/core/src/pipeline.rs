//! End-to-end assistance run: detection and depth branches on one image,
//! joined into an announcement.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::assist::{
    audio_lookup, compose_announcement, fuse_depth, proximity_filter, Announcement, AssistConfig,
    Obstacle,
};
use crate::depth::{
    disparity_to_depth, DepthMap, DisparityMap, MatchNet, MatchNetConfig, StereoRig, SynthNet,
    SynthNetConfig, SYNTH_INPUT_SIZE,
};
use crate::detector::{
    classes::COCO_CLASSES, default_anchors, detect, Anchor, Detection, DetectorConfig, Mode,
    ModeConfig, DEFAULT_CONF_THRESHOLD, DEFAULT_INPUT_SIZE, DEFAULT_IOU_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::io;
use crate::preprocess::{intensities, normalize, ChannelStats};
use crate::tensor::Tensor;

pub const DEFAULT_SEED: u64 = 42;
/// Fixed-point scale of the exported depth PGM (1/256 m resolution).
pub const DEPTH_PGM_SCALE: f64 = 256.0;

/// Order in which the two branches run. All three give identical results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Concurrent,
    DetectorFirst,
    DepthFirst,
}

impl FromStr for Execution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concurrent" => Ok(Self::Concurrent),
            "detector-first" => Ok(Self::DetectorFirst),
            "depth-first" => Ok(Self::DepthFirst),
            other => Err(Error::Config(format!("unknown execution order {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    /// Side of the square detector input; head grids are `input_size / stride`.
    pub input_size: usize,
    /// `stride width height` lines; YOLOv3 anchors when absent.
    pub anchors: Option<PathBuf>,
    /// One class per line; the 80 COCO classes when absent.
    pub classes: Option<PathBuf>,
    /// Channel statistics for the detector input; zero means and 255 when absent.
    pub stats: Option<PathBuf>,
    /// Detection head files by stride. No heads means no detections.
    pub heads: Vec<(usize, PathBuf)>,
    /// Required for depth; absent only for detection-only use.
    pub rig: Option<StereoRig>,
    /// Resolution both depth networks run at.
    pub depth_size: (usize, usize),
    pub synth_arch: Option<PathBuf>,
    pub matcher_arch: Option<PathBuf>,
    /// Seeded random weights are used when a path is absent.
    pub synth_weights: Option<PathBuf>,
    pub matcher_weights: Option<PathBuf>,
    /// Required for announcements.
    pub audio_catalog: Option<PathBuf>,
    pub assist: AssistConfig,
    pub seed: u64,
}

const PATH_KEYS: [&str; 8] = [
    "anchors",
    "classes",
    "stats",
    "synth_arch",
    "matcher_arch",
    "synth_weights",
    "matcher_weights",
    "audio_catalog",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl PipelineConfig {
    /// Builds a config from `key = value` pairs; unknown keys are rejected.
    /// `baseline_m` and `focal_px` come as a pair.
    pub fn from_key_values(kv: &BTreeMap<String, String>, default_seed: u64) -> Result<Self> {
        let get = |k: &str| kv.get(k).map(String::as_str);
        let path = |k: &str| get(k).map(PathBuf::from);

        let mut heads = Vec::new();
        for (k, v) in kv {
            if let Some(stride) = k.strip_prefix("head_") {
                heads.push((parse::<usize>(k, stride)?, PathBuf::from(v)));
            } else if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
        }
        heads.sort_by(|a, b| b.0.cmp(&a.0));

        let depth_h = get("depth_height")
            .map(|v| parse("depth_height", v))
            .transpose()?;
        let depth_w = get("depth_width")
            .map(|v| parse("depth_width", v))
            .transpose()?;
        let defaults = AssistConfig::default();
        Ok(Self {
            mode: get("mode")
                .map(Mode::from_str)
                .transpose()?
                .unwrap_or(Mode::Indoor),
            conf_threshold: get("conf_threshold")
                .map(|v| parse("conf_threshold", v))
                .transpose()?
                .unwrap_or(DEFAULT_CONF_THRESHOLD),
            iou_threshold: get("iou_threshold")
                .map(|v| parse("iou_threshold", v))
                .transpose()?
                .unwrap_or(DEFAULT_IOU_THRESHOLD),
            input_size: get("input_size")
                .map(|v| parse("input_size", v))
                .transpose()?
                .unwrap_or(DEFAULT_INPUT_SIZE),
            anchors: path("anchors"),
            classes: path("classes"),
            stats: path("stats"),
            heads,
            rig: match (get("baseline_m"), get("focal_px")) {
                (Some(b), Some(f)) => Some(StereoRig {
                    baseline_m: parse("baseline_m", b)?,
                    focal_px: parse("focal_px", f)?,
                }),
                (None, None) => None,
                _ => {
                    return Err(Error::Config(
                        "baseline_m and focal_px must be given together".into(),
                    ))
                }
            },
            depth_size: (
                depth_h.unwrap_or(SYNTH_INPUT_SIZE),
                depth_w.unwrap_or(SYNTH_INPUT_SIZE),
            ),
            synth_arch: path("synth_arch"),
            matcher_arch: path("matcher_arch"),
            synth_weights: path("synth_weights"),
            matcher_weights: path("matcher_weights"),
            audio_catalog: path("audio_catalog"),
            assist: AssistConfig {
                near_threshold_m: get("near_threshold_m")
                    .map(|v| parse("near_threshold_m", v))
                    .transpose()?
                    .unwrap_or(defaults.near_threshold_m),
                max_announced: get("max_announced")
                    .map(|v| parse("max_announced", v))
                    .transpose()?
                    .unwrap_or(defaults.max_announced),
                depth_aggregator: defaults.depth_aggregator,
            },
            seed: get("seed")
                .map(|v| parse("seed", v))
                .transpose()?
                .unwrap_or(default_seed),
        })
    }

    /// Reads a config file, resolving relative paths in it against the file's
    /// directory, then applies `overrides` (taken as given).
    pub fn load(
        path: &Path,
        overrides: &BTreeMap<String, String>,
        default_seed: u64,
    ) -> Result<Self> {
        let mut kv = io::parse_key_values(&io::read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (k, v) in kv.iter_mut() {
            if PATH_KEYS.contains(&k.as_str()) || k.starts_with("head_") {
                let p = Path::new(v.as_str());
                if p.is_relative() {
                    *v = base.join(p).display().to_string();
                }
            }
        }
        kv.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
        Self::from_key_values(&kv, default_seed)
    }

    pub fn rig(&self) -> Result<StereoRig> {
        self.rig
            .ok_or_else(|| Error::Config("baseline_m and focal_px are required for depth".into()))
    }

    pub fn audio_catalog(&self) -> Result<&Path> {
        self.audio_catalog
            .as_deref()
            .ok_or_else(|| Error::Config("audio_catalog is required for announcements".into()))
    }

    /// Value and file-existence checks that need no parsing of the files.
    pub fn validate(&self) -> Result<()> {
        if let Some(rig) = &self.rig {
            rig.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        for (name, t) in [
            ("conf_threshold", self.conf_threshold),
            ("iou_threshold", self.iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {t}")));
            }
        }
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        let (h, w) = self.depth_size;
        if h == 0 || w == 0 {
            return Err(Error::Config(format!("depth size {h}x{w} is empty")));
        }
        self.assist.validate()?;
        let files = [
            &self.anchors,
            &self.classes,
            &self.stats,
            &self.synth_arch,
            &self.matcher_arch,
            &self.synth_weights,
            &self.matcher_weights,
        ];
        for p in files
            .into_iter()
            .flatten()
            .chain(self.heads.iter().map(|(_, p)| p))
        {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "file {} does not exist",
                    p.display()
                )));
            }
        }
        if let Some(dir) = self.audio_catalog.as_ref().filter(|d| !d.is_dir()) {
            return Err(Error::Config(format!(
                "audio catalog {} is not a directory",
                dir.display()
            )));
        }
        Ok(())
    }
}

const KNOWN_KEYS: [&str; 19] = [
    "mode",
    "conf_threshold",
    "iou_threshold",
    "input_size",
    "anchors",
    "classes",
    "stats",
    "baseline_m",
    "focal_px",
    "depth_height",
    "depth_width",
    "synth_arch",
    "matcher_arch",
    "synth_weights",
    "matcher_weights",
    "audio_catalog",
    "near_threshold_m",
    "max_announced",
    "seed",
];

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&io::read_text(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Both depth networks, loaded or seeded.
pub fn load_depth_nets(cfg: &PipelineConfig) -> Result<(SynthNet<f32>, MatchNet<f32>)> {
    let (h, w) = cfg.depth_size;
    let synth_cfg = match &cfg.synth_arch {
        Some(p) => read_json(p)?,
        None => SynthNetConfig::for_size(h, w)?,
    };
    let matcher_cfg = match &cfg.matcher_arch {
        Some(p) => read_json(p)?,
        None => MatchNetConfig::for_size(h, w)?,
    };
    let synth_in = (synth_cfg.input_height, synth_cfg.input_width);
    let matcher_in = (matcher_cfg.input_height, matcher_cfg.input_width);
    if synth_in != (h, w) || matcher_in != (h, w) {
        return Err(Error::Config(format!(
            "depth size {h}x{w} disagrees with the architectures ({synth_in:?}, {matcher_in:?})"
        )));
    }
    let mut synth = SynthNet::new(synth_cfg, cfg.seed)?;
    let mut matcher = MatchNet::new(matcher_cfg, cfg.seed.wrapping_add(1))?;
    match &cfg.synth_weights {
        Some(p) => io::load_params(p, synth.params_mut())?,
        None => log::warn!("no synth_weights given; using seeded random weights"),
    }
    match &cfg.matcher_weights {
        Some(p) => io::load_params(p, matcher.params_mut())?,
        None => log::warn!("no matcher_weights given; using seeded random weights"),
    }
    Ok((synth, matcher))
}

/// Class list, anchors, thresholds, input statistics and head tensors.
#[derive(Clone, Debug)]
pub struct DetectorStage {
    pub config: DetectorConfig,
    pub stats: ChannelStats,
    pub heads: Vec<(usize, Tensor<f32>)>,
}

impl DetectorStage {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let class_names: Vec<String> = match &cfg.classes {
            Some(p) => io::load_class_list(p)?,
            None => COCO_CLASSES.iter().map(|s| s.to_string()).collect(),
        };
        let anchors: Vec<(usize, Vec<Anchor>)> = match &cfg.anchors {
            Some(p) => io::load_anchors(p)?,
            None => default_anchors(),
        };
        // COCO names follow the mode's default partition; names outside COCO
        // are reported in both modes.
        let defaults = ModeConfig::coco_default(cfg.mode);
        let allowed: Vec<&String> = class_names
            .iter()
            .filter(|c| {
                defaults.allowed_classes.contains(*c) || !COCO_CLASSES.contains(&c.as_str())
            })
            .collect();
        let config = DetectorConfig {
            input_size: cfg.input_size,
            anchors,
            mode: ModeConfig::new(cfg.mode, &allowed, &class_names)?,
            class_names,
            conf_threshold: cfg.conf_threshold,
            iou_threshold: cfg.iou_threshold,
        };
        config.validate()?;
        let stats = match &cfg.stats {
            Some(p) => ChannelStats::load(p)?,
            None => ChannelStats::default(),
        };
        let mut heads = Vec::with_capacity(cfg.heads.len());
        for (stride, p) in &cfg.heads {
            let head = io::load_head(p)?;
            let want = config.anchors_for(*stride)?.len() * (5 + config.class_names.len());
            let grid = cfg.input_size / stride;
            if head.shape() != [want, grid, grid] {
                return Err(Error::Config(format!(
                    "{}: head is {:?}, stride {stride} needs [{want}, {grid}, {grid}]",
                    p.display(),
                    head.shape()
                )));
            }
            heads.push((*stride, head));
        }
        Ok(Self {
            config,
            stats,
            heads,
        })
    }

    /// Normalizes the resized image for the backbone and decodes the heads.
    /// Boxes come back in the pixels of `image`.
    pub fn run(&self, image: &Tensor<f32>) -> Result<Vec<Detection>> {
        let (_, h, w) = image.dims3()?;
        let s = self.config.input_size;
        // The backbone is external: its heads arrive precomputed from files.
        let _input = normalize(
            &intensities(&io::resize_bilinear(image, s, s)?)?,
            &self.stats,
        )?;
        let dets = detect(&self.heads, &self.config)?;
        let (sx, sy) = (w as f64 / s as f64, h as f64 / s as f64);
        Ok(dets
            .into_iter()
            .map(|d| Detection {
                bbox: d.bbox.scaled(sx, sy),
                ..d
            })
            .collect())
    }
}

/// Synthesis and matching networks at a fixed resolution, plus the rig.
#[derive(Clone, Debug)]
pub struct DepthStage {
    pub synth: SynthNet<f32>,
    pub matcher: MatchNet<f32>,
    pub rig: StereoRig,
}

impl DepthStage {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let rig = cfg.rig()?;
        let (synth, matcher) = load_depth_nets(cfg)?;
        Ok(Self {
            synth,
            matcher,
            rig,
        })
    }

    /// Synthesizes the right view, matches, and returns disparity at the
    /// resolution of `image` (rescaled by the width ratio) with its depth.
    pub fn run(&self, image: &Tensor<f32>) -> Result<(DisparityMap, DepthMap)> {
        let (_, h, w) = image.dims3()?;
        let cfg = self.synth.config();
        let (nh, nw) = (cfg.input_height, cfg.input_width);
        let left = io::resize_bilinear(image, nh, nw)?;
        let right = self.synth.synthesize_right(&left)?;
        let small = self.matcher.match_stereo(&left, &right)?;
        let full = io::resize_bilinear(small.values(), h, w)?;
        let disparity = DisparityMap::new(full)?.scaled(w as f64 / nw as f64)?;
        let depth = disparity_to_depth(&disparity, &self.rig)?;
        Ok((disparity, depth))
    }
}

/// Everything the run needs, loaded and checked up front.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub detector: DetectorStage,
    pub depth: DepthStage,
    pub audio_catalog: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    /// Detections in original-image pixels.
    pub detections: Vec<Detection>,
    pub disparity: DisparityMap,
    pub depth: DepthMap,
    pub obstacles: Vec<Obstacle>,
    pub announcement: Announcement,
    /// Set when a spoken token has no clip; the text is still valid.
    pub missing_audio: Option<String>,
}

impl Pipeline {
    /// Validates the config and loads every referenced file. Nothing is
    /// computed on images until this succeeds.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let audio_catalog = cfg.audio_catalog()?.to_path_buf();
        let detector = DetectorStage::load(&cfg)?;
        let depth = DepthStage::load(&cfg)?;
        Ok(Self {
            cfg,
            detector,
            depth,
            audio_catalog,
        })
    }

    pub fn run(&self, image: &Tensor<f32>, execution: Execution) -> Result<PipelineOutput> {
        let (c, _, _) = image.dims3().map_err(|e| e.in_stage("load"))?;
        if c != 3 {
            return Err(
                Error::shape(format!("expected an RGB image, got {c} channels")).in_stage("load"),
            );
        }
        let detector = || self.detector.run(image).map_err(|e| e.in_stage("detector"));
        let depth = || self.depth.run(image).map_err(|e| e.in_stage("depth"));
        let (dets, depth) = match execution {
            Execution::Concurrent => std::thread::scope(|s| {
                let det_handle = s.spawn(detector);
                let depth_result = depth();
                let dets = det_handle.join().expect("detector branch panicked");
                (dets, depth_result)
            }),
            Execution::DetectorFirst => {
                let d = detector();
                (d, depth())
            }
            Execution::DepthFirst => {
                let z = depth();
                (detector(), z)
            }
        };
        let (detections, (disparity, depth)) = (dets?, depth?);

        let obstacles = proximity_filter(&fuse_depth(&detections, &depth), &self.cfg.assist);
        let text_only = compose_announcement(&obstacles);
        let (announcement, missing_audio) = match audio_lookup(&text_only, &self.audio_catalog) {
            Ok(a) => (a, None),
            Err(Error::MissingAudio(token)) => {
                log::error!("no audio clip for {token:?}; writing the text without a playlist");
                (text_only, Some(token))
            }
            Err(e) => return Err(e.in_stage("audio")),
        };
        Ok(PipelineOutput {
            detections,
            disparity,
            depth,
            obstacles,
            announcement,
            missing_audio,
        })
    }
}

/// Names of the files written by [`write_artifacts`].
pub const ARTIFACTS: [&str; 6] = [
    "detections.jsonl",
    "disparity.bin",
    "depth.bin",
    "depth.pgm",
    "announcement.txt",
    "playlist.m3u",
];

/// Writes the run's records into `dir`. The playlist is omitted (and any
/// stale one removed) when audio was missing. Returns the files written.
pub fn write_artifacts(out: &PipelineOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let (h, w) = (out.depth.height(), out.depth.width());
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        io::write_atomic(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    put(
        "detections.jsonl",
        io::detections_to_jsonl(&out.detections)?.as_bytes(),
    )?;
    put(
        "disparity.bin",
        &io::encode_map(h, w, out.disparity.data())?,
    )?;
    put("depth.bin", &io::encode_map(h, w, out.depth.values())?)?;
    put(
        "announcement.txt",
        format!("{}\n", out.announcement.text).as_bytes(),
    )?;
    let pgm = dir.join("depth.pgm");
    io::save_pgm16_map(&pgm, h, w, out.depth.values(), DEPTH_PGM_SCALE)?;
    written.push(pgm.clone());
    written.push(io::scale_sidecar_path(&pgm));
    let playlist = dir.join("playlist.m3u");
    if out.missing_audio.is_none() {
        io::write_atomic(
            &playlist,
            io::playlist_m3u(&out.announcement.audio_paths).as_bytes(),
        )?;
        written.push(playlist);
    } else if playlist.exists() {
        fs::remove_file(&playlist).map_err(|e| Error::io(&playlist, e))?;
    }
    Ok(written)
}
