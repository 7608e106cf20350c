//! End-to-end runs on the bundled fixture in `fixtures/assist`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use vision_core::assist::{compose_announcement, fuse_depth, proximity_filter, AssistConfig};
use vision_core::depth::DepthMap;
use vision_core::detector::{BoundingBox, Detection, Position};
use vision_core::io;
use vision_core::pipeline::{write_artifacts, Execution, Pipeline, PipelineConfig, ARTIFACTS};
use vision_core::Error;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/assist")
}

fn config_with(overrides: &[(&str, &str)]) -> PipelineConfig {
    let kv: BTreeMap<String, String> = overrides
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    PipelineConfig::load(&fixture_dir().join("config.txt"), &kv, 42).unwrap()
}

fn scene() -> vision_core::Tensor32 {
    io::load_image(&fixture_dir().join("scene.ppm")).unwrap()
}

/// Copies the fixture so a test can alter the catalog.
fn fixture_copy() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixture_dir();
    for entry in fs::read_dir(&src).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            fs::copy(&p, tmp.path().join(p.file_name().unwrap())).unwrap();
        }
    }
    let audio = tmp.path().join("audio");
    fs::create_dir_all(&audio).unwrap();
    for entry in fs::read_dir(src.join("audio")).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, audio.join(p.file_name().unwrap())).unwrap();
    }
    tmp
}

#[test]
fn fixture_announces_the_chair() {
    let pipeline = Pipeline::new(config_with(&[])).unwrap();
    let out = pipeline.run(&scene(), Execution::Concurrent).unwrap();
    // the car slot is confident but outside the indoor partition
    assert_eq!(out.detections.len(), 1);
    let chair = &out.detections[0];
    assert_eq!(chair.class_name, "chair");
    assert_eq!(chair.position, Position::Left);
    assert_eq!((out.depth.height(), out.depth.width()), (64, 96));
    assert_eq!(out.obstacles.len(), 1);
    assert!(out.obstacles[0].depth_m <= 3.0);
    assert_eq!(out.announcement.text, "chair to your left at 1 meters");
    assert_eq!(
        out.announcement.audio_paths.len(),
        out.announcement.tokens.len()
    );
    assert!(out.missing_audio.is_none());
}

#[test]
fn execution_orders_agree_and_runs_repeat() {
    let image = scene();
    let first = Pipeline::new(config_with(&[]))
        .unwrap()
        .run(&image, Execution::Concurrent)
        .unwrap();
    let again = Pipeline::new(config_with(&[])).unwrap();
    for e in [
        Execution::Concurrent,
        Execution::DetectorFirst,
        Execution::DepthFirst,
    ] {
        assert_eq!(again.run(&image, e).unwrap(), first, "{e:?}");
    }
}

#[test]
fn seed_changes_untrained_depth() {
    let image = scene();
    let a = Pipeline::new(config_with(&[]))
        .unwrap()
        .run(&image, Execution::DepthFirst)
        .unwrap();
    let b = Pipeline::new(config_with(&[("seed", "7")]))
        .unwrap()
        .run(&image, Execution::DepthFirst)
        .unwrap();
    assert_eq!(a.detections, b.detections);
    assert_ne!(a.depth, b.depth);
}

#[test]
fn outdoor_mode_reports_the_car() {
    let out = Pipeline::new(config_with(&[("mode", "outdoor")]))
        .unwrap()
        .run(&scene(), Execution::Concurrent)
        .unwrap();
    assert!(out
        .detections
        .iter()
        .any(|d| d.class_name == "car" && d.position == Position::Right));
}

#[test]
fn no_obstacles_is_path_clear() {
    let mut cfg = config_with(&[]);
    cfg.heads.clear();
    let out = Pipeline::new(cfg)
        .unwrap()
        .run(&scene(), Execution::Concurrent)
        .unwrap();
    assert!(out.detections.is_empty());
    assert_eq!(out.announcement.text, "path clear");
    assert_eq!(out.announcement.tokens, vec!["path clear".to_string()]);
    assert!(out.announcement.audio_paths[0].ends_with("path_clear.wav"));

    let far = config_with(&[("near_threshold_m", "0.1")]);
    let out = Pipeline::new(far)
        .unwrap()
        .run(&scene(), Execution::Concurrent)
        .unwrap();
    assert_eq!(out.detections.len(), 1);
    assert_eq!(out.announcement.text, "path clear");
}

#[test]
fn artifacts_are_written_and_readable() {
    let out = Pipeline::new(config_with(&[]))
        .unwrap()
        .run(&scene(), Execution::Concurrent)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_artifacts(&out, dir.path()).unwrap();
    for name in ARTIFACTS {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let dets = io::parse_detections_jsonl(
        &fs::read_to_string(dir.path().join("detections.jsonl")).unwrap(),
    )
    .unwrap();
    assert_eq!(dets, out.detections);
    let (h, w, depth) = io::load_map(&dir.path().join("depth.bin")).unwrap();
    assert_eq!((h, w), (64, 96));
    assert_eq!(depth, out.depth.values());
    assert_eq!(
        fs::read_to_string(dir.path().join("announcement.txt")).unwrap(),
        "chair to your left at 1 meters\n"
    );
    let playlist = fs::read_to_string(dir.path().join("playlist.m3u")).unwrap();
    assert_eq!(playlist.lines().count(), 1 + out.announcement.tokens.len());
}

#[test]
fn missing_clip_keeps_text_and_drops_playlist() {
    let tmp = fixture_copy();
    fs::remove_file(tmp.path().join("audio/chair.wav")).unwrap();
    let cfg = PipelineConfig::load(&tmp.path().join("config.txt"), &BTreeMap::new(), 42).unwrap();
    let out = Pipeline::new(cfg)
        .unwrap()
        .run(&scene(), Execution::Concurrent)
        .unwrap();
    assert_eq!(out.missing_audio.as_deref(), Some("chair"));
    assert_eq!(out.announcement.text, "chair to your left at 1 meters");

    let dir = tmp.path().join("run");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("playlist.m3u"), "stale").unwrap();
    write_artifacts(&out, &dir).unwrap();
    assert!(!dir.join("playlist.m3u").exists());
    assert!(dir.join("announcement.txt").is_file());
}

#[test]
fn bad_configs_fail_before_any_image_work() {
    let fixture = fixture_dir().join("config.txt");
    let kv = |pairs: &[(&str, &str)]| -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    };
    assert!(matches!(
        PipelineConfig::load(&fixture, &kv(&[("colour", "red")]), 42),
        Err(Error::Config(_))
    ));
    assert!(
        PipelineConfig::load(&fixture, &kv(&[("conf_threshold", "1.5")]), 42)
            .and_then(Pipeline::new)
            .is_err()
    );
    assert!(PipelineConfig::load(
        &fixture,
        &kv(&[("audio_catalog", "/nonexistent/audio")]),
        42
    )
    .and_then(Pipeline::new)
    .is_err());
    // a head whose grid does not match the input size
    assert!(
        PipelineConfig::load(&fixture, &kv(&[("input_size", "128")]), 42)
            .and_then(Pipeline::new)
            .is_err()
    );
    let mut no_rig = config_with(&[]);
    no_rig.rig = None;
    assert!(Pipeline::new(no_rig).is_err());
}

#[test]
fn uniform_two_meter_scene() {
    let chair = Detection {
        bbox: BoundingBox {
            x: 50.0,
            y: 120.0,
            w: 60.0,
            h: 80.0,
            confidence: 0.9,
        },
        class_id: 56,
        class_name: "chair".into(),
        score: 0.9,
        position: Position::Left,
    };
    let depth = DepthMap::uniform(240, 320, 2.0).unwrap();
    let near = proximity_filter(&fuse_depth(&[chair], &depth), &AssistConfig::default());
    assert_eq!(near.len(), 1);
    assert_eq!(near[0].depth_m, 2.0);
    assert_eq!(
        compose_announcement(&near).text,
        "chair to your left at 2 meters"
    );
}
