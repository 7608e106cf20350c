use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use vision_core::assist::{check_catalog, vocabulary, write_stub_catalog};
use vision_core::depth::{
    synthetic_pair, train_network, uniform_shift_pair, MatchNet, MatchNetConfig, StereoSample,
    SynthNet, SynthNetConfig, SyntheticConfig, TrainPlan, TrainReport,
};
use vision_core::detector::{anchor_census, classes::COCO_CLASSES};
use vision_core::pipeline::{
    write_artifacts, DepthStage, DetectorStage, Execution, Pipeline, PipelineConfig, DEFAULT_SEED,
    DEPTH_PGM_SCALE,
};
use vision_core::preprocess::{channel_means, intensities};
use vision_core::tensor::{seeded_rng, Method, Tensor};
use vision_core::{io, Error};

use crate::{
    AssistArgs, CatalogArgs, CensusArgs, Command, ConfigArgs, DepthArgs, DetectArgs, ExecutionArg,
    OptimizerArg, StatsArgs, SynthDataArgs, TrainArgs, TrainMatcherArgs,
};

/// Exit status of `assist` when the text was produced but a clip is missing.
const EXIT_MISSING_AUDIO: u8 = 3;

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Stats(a) => stats(a),
        Command::Detect(a) => detect(a),
        Command::Depth(a) => depth(a),
        Command::Assist(a) => assist(a),
        Command::TrainSynth(a) => train_synth(a),
        Command::TrainMatcher(a) => train_matcher(a),
        Command::Census(a) => census(a),
        Command::SynthData(a) => synth_data(a),
        Command::Catalog(a) => catalog(a),
    }
}

/// `$VISION_SEED` if set, otherwise the built-in default.
fn env_seed() -> Result<u64> {
    match std::env::var("VISION_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("VISION_SEED={v:?} is not an integer")),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

impl ConfigArgs {
    fn overrides(&self) -> Result<BTreeMap<String, String>> {
        let mut kv = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("mode", self.mode.clone());
        put("conf_threshold", self.conf_threshold.map(|v| v.to_string()));
        put("iou_threshold", self.iou_threshold.map(|v| v.to_string()));
        put("input_size", self.input_size.map(|v| v.to_string()));
        put("anchors", path(&self.anchors));
        put("classes", path(&self.classes));
        put("stats", path(&self.stats));
        put("baseline_m", self.baseline_m.map(|v| v.to_string()));
        put("focal_px", self.focal_px.map(|v| v.to_string()));
        put("depth_height", self.depth_height.map(|v| v.to_string()));
        put("depth_width", self.depth_width.map(|v| v.to_string()));
        put("synth_arch", path(&self.synth_arch));
        put("matcher_arch", path(&self.matcher_arch));
        put("synth_weights", path(&self.synth_weights));
        put("matcher_weights", path(&self.matcher_weights));
        put("audio_catalog", path(&self.audio_catalog));
        put(
            "near_threshold_m",
            self.near_threshold_m.map(|v| v.to_string()),
        );
        put("max_announced", self.max_announced.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        for h in &self.heads {
            let Some((stride, p)) = h.split_once('=') else {
                bail!("--head expects STRIDE=PATH, got {h:?}");
            };
            kv.insert(format!("head_{}", stride.trim()), p.to_string());
        }
        Ok(kv)
    }

    fn resolve(&self) -> Result<PipelineConfig> {
        let overrides = self.overrides()?;
        let seed = env_seed()?;
        let cfg = match &self.config {
            Some(p) => PipelineConfig::load(p, &overrides, seed)?,
            None => PipelineConfig::from_key_values(&overrides, seed)?,
        };
        Ok(cfg)
    }
}

fn stats(a: StatsArgs) -> Result<ExitCode> {
    let images = a
        .images
        .iter()
        .map(|p| Ok(intensities(&io::load_image(p)?)?))
        .collect::<Result<Vec<Tensor<f32>>>>()?;
    let stats = channel_means(&images)?;
    match &a.out {
        Some(p) => stats.save(p)?,
        None => print!("{}", stats.to_text()),
    }
    Ok(ExitCode::SUCCESS)
}

fn detect(a: DetectArgs) -> Result<ExitCode> {
    let cfg = a.config.resolve()?;
    cfg.validate()?;
    let stage = DetectorStage::load(&cfg)?;
    let image = match &a.image {
        Some(p) => io::load_image(p)?,
        None => Tensor::zeros(&[3, cfg.input_size, cfg.input_size])?,
    };
    let jsonl = io::detections_to_jsonl(&stage.run(&image)?)?;
    match &a.out {
        Some(p) => io::write_atomic(p, jsonl.as_bytes())?,
        None => print!("{jsonl}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn depth(a: DepthArgs) -> Result<ExitCode> {
    let cfg = a.config.resolve()?;
    cfg.validate()?;
    let stage = DepthStage::load(&cfg)?;
    let image = io::load_image(&a.image)?;
    let (disparity, depth) = stage.run(&image)?;
    let (h, w) = (depth.height(), depth.width());
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    io::write_atomic(
        &a.out.join("disparity.bin"),
        &io::encode_map(h, w, disparity.data())?,
    )?;
    io::write_atomic(
        &a.out.join("depth.bin"),
        &io::encode_map(h, w, depth.values())?,
    )?;
    io::save_pgm16_map(
        &a.out.join("depth.pgm"),
        h,
        w,
        depth.values(),
        DEPTH_PGM_SCALE,
    )?;
    println!("mean disparity {:.4} px", disparity.mean());
    Ok(ExitCode::SUCCESS)
}

fn assist(a: AssistArgs) -> Result<ExitCode> {
    let pipeline = Pipeline::new(a.config.resolve()?)?;
    let image = io::load_image(&a.image)?;
    let execution = match a.execution {
        ExecutionArg::Concurrent => Execution::Concurrent,
        ExecutionArg::DetectorFirst => Execution::DetectorFirst,
        ExecutionArg::DepthFirst => Execution::DepthFirst,
    };
    let out = pipeline.run(&image, execution)?;
    if let Some(dir) = &a.out {
        write_artifacts(&out, dir)?;
    }
    println!("{}", out.announcement.text);
    if let Some(token) = &out.missing_audio {
        eprintln!("error: {}", Error::MissingAudio(token.clone()));
        return Ok(ExitCode::from(EXIT_MISSING_AUDIO));
    }
    Ok(ExitCode::SUCCESS)
}

fn training_data(t: &TrainArgs, seed: u64) -> Result<Vec<StereoSample<f32>>> {
    if let Some(dir) = &t.data {
        return Ok(io::load_stereo_dir(dir, Some((t.height, t.width)))?);
    }
    let Some(n) = t.synthetic else {
        bail!("give --data DIR or --synthetic N");
    };
    let cfg = SyntheticConfig {
        height: t.height,
        width: t.width,
        ..SyntheticConfig::default()
    };
    let mut rng = seeded_rng(seed);
    Ok((0..n)
        .map(|_| synthetic_pair(&cfg, &mut rng))
        .collect::<vision_core::Result<_>>()?)
}

fn plan(t: &TrainArgs, base: TrainPlan) -> TrainPlan {
    let mut plan = base;
    plan.epochs = t.epochs.unwrap_or(base.epochs);
    plan.optim.learning_rate = t.lr;
    plan.optim.weight_decay = t.weight_decay;
    plan.optim.batch_size = t.batch_size;
    plan.optim.method = match t.optimizer {
        OptimizerArg::Adam => Method::adam(),
        OptimizerArg::Sgd => Method::Sgd,
    };
    plan
}

fn print_report(report: &TrainReport) {
    for (i, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {} loss {l:.6}", i + 1);
    }
    if let (Some(first), Some(last)) = (report.first(), report.last()) {
        println!("loss {first:.6} -> {last:.6} over {} steps", report.steps);
    }
}

fn write_arch<C: serde::Serialize>(path: &Path, arch: &C) -> Result<()> {
    let json = serde_json::to_string_pretty(arch)?;
    io::write_atomic(path, format!("{json}\n").as_bytes())?;
    Ok(())
}

fn train_synth(t: TrainArgs) -> Result<ExitCode> {
    let seed = t.seed.map_or_else(env_seed, Ok)?;
    let data = training_data(&t, seed)?;
    let mut net = SynthNet::<f32>::new(SynthNetConfig::for_size(t.height, t.width)?, seed)?;
    let report = train_network(&mut net, &data, &plan(&t, TrainPlan::synthesis()), seed)?;
    print_report(&report);
    io::save_params(&t.out, net.params())?;
    if let Some(p) = &t.arch_out {
        write_arch(p, net.config())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn train_matcher(a: TrainMatcherArgs) -> Result<ExitCode> {
    let t = &a.train;
    let seed = t.seed.map_or_else(env_seed, Ok)?;
    let mut data = if a.uniform_shifts.is_empty() {
        training_data(t, seed)?
    } else {
        let mut rng = seeded_rng(seed);
        a.uniform_shifts
            .iter()
            .map(|&s| {
                uniform_shift_pair(
                    t.height,
                    t.width,
                    s,
                    SyntheticConfig::default().grain,
                    &mut rng,
                )
            })
            .collect::<vision_core::Result<_>>()?
    };
    if data.iter().any(|s| s.disparity.is_none()) {
        bail!("matcher training needs ground-truth disparity for every pair");
    }
    if let (Some(weights), Some(arch)) = (&a.synth_weights, &a.synth_arch) {
        let arch: SynthNetConfig = serde_json::from_str(&fs::read_to_string(arch)?)
            .with_context(|| format!("parsing {}", arch.display()))?;
        let mut synth = SynthNet::<f32>::new(arch, seed)?;
        io::load_params(weights, synth.params_mut())?;
        for s in &mut data {
            s.right = synth.synthesize_right(&s.left)?;
        }
    }
    let mut net = MatchNet::<f32>::new(
        MatchNetConfig::for_size(t.height, t.width)?,
        seed.wrapping_add(1),
    )?;
    let report = train_network(&mut net, &data, &plan(t, TrainPlan::matcher()), seed)?;
    print_report(&report);
    io::save_params(&t.out, net.params())?;
    if let Some(p) = &t.arch_out {
        write_arch(p, net.config())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn census(a: CensusArgs) -> Result<ExitCode> {
    let c = anchor_census(a.input_size, a.boxes, &a.strides)?;
    for (s, n) in a.strides.iter().zip(&c.per_stride) {
        println!("stride {s}: {n}");
    }
    println!("total: {}", c.total);
    Ok(ExitCode::SUCCESS)
}

fn synth_data(a: SynthDataArgs) -> Result<ExitCode> {
    let seed = a.seed.map_or_else(env_seed, Ok)?;
    let mut rng = seeded_rng(seed);
    let samples = match a.uniform_shift {
        Some(s) => (0..a.count)
            .map(|_| uniform_shift_pair(a.height, a.width, s, a.grain, &mut rng))
            .collect::<vision_core::Result<Vec<_>>>()?,
        None => {
            let cfg = SyntheticConfig {
                height: a.height,
                width: a.width,
                background_disparity: a.background_disparity,
                max_disparity: a.max_disparity,
                rectangles: a.rectangles,
                grain: a.grain,
            };
            (0..a.count)
                .map(|_| synthetic_pair(&cfg, &mut rng))
                .collect::<vision_core::Result<Vec<_>>>()?
        }
    };
    io::write_stereo_dir(&a.out, &samples)?;
    println!("wrote {} pairs to {}", samples.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn catalog(a: CatalogArgs) -> Result<ExitCode> {
    let classes: Vec<String> = match &a.classes {
        Some(p) => io::load_class_list(p)?,
        None => COCO_CLASSES.iter().map(|s| s.to_string()).collect(),
    };
    let vocab = vocabulary(&classes);
    if a.check {
        let problems = check_catalog(&vocab, &a.dir);
        for p in &problems {
            eprintln!("{p}");
        }
        println!("{} tokens, {} problems", vocab.len(), problems.len());
        return Ok(if problems.is_empty() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        });
    }
    let written = write_stub_catalog(&vocab, &a.dir)?;
    println!("wrote {} clips to {}", written.len(), a.dir.display());
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_become_config_keys() {
        let args = ConfigArgs {
            conf_threshold: Some(0.25),
            heads: vec!["32=a.bin".into(), "16=b.bin".into()],
            seed: Some(9),
            ..ConfigArgs::default()
        };
        let kv = args.overrides().unwrap();
        assert_eq!(kv["conf_threshold"], "0.25");
        assert_eq!(kv["head_32"], "a.bin");
        assert_eq!(kv["head_16"], "b.bin");
        assert_eq!(kv["seed"], "9");
        assert_eq!(kv.len(), 4);
    }

    #[test]
    fn malformed_head_flag_is_rejected() {
        let args = ConfigArgs {
            heads: vec!["32".into()],
            ..ConfigArgs::default()
        };
        assert!(args.overrides().is_err());
    }
}
