//! Acceptance suite: one test per criterion, named `cN_*` so `cargo test
//! --test acceptance` prints one pass/fail line for each.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vision_core::assist::{
    audio_lookup, check_catalog, compose_announcement, vocabulary, write_stub_catalog, Obstacle,
    MAX_SPOKEN_METERS,
};
use vision_core::depth::*;
use vision_core::detector::{
    anchor_census, classes::COCO_CLASSES, classify_position, nms, BoundingBox, Detection, Position,
};
use vision_core::io;
use vision_core::pipeline::{write_artifacts, Execution, Pipeline, PipelineConfig};
use vision_core::preprocess::{channel_means, normalize, ChannelStats, DEFAULT_SIGMA};
use vision_core::tensor::{seeded_rng, ConvSpec, LossKind, Method, OptimConfig, Tensor};
use vision_core::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn within(start: Instant, limit: Duration, what: &str) {
    let took = start.elapsed();
    assert!(took < limit, "{what} took {took:?}, limit {limit:?}");
}

#[test]
fn c1_anchor_census() {
    let start = Instant::now();
    let c = anchor_census(416, 3, &[32, 16, 8]).unwrap();
    assert_eq!(c.per_stride, vec![507, 2028, 8112]);
    assert_eq!(c.total, 10_647);
    // a single 13x13 grid with five anchors per cell
    assert_eq!(anchor_census(416, 5, &[32]).unwrap().total, 845);
    within(start, Duration::from_secs(1), "census");
}

#[test]
fn c2_gradient_suite() {
    const H: f64 = 1e-3;
    const PRIMITIVE_TOL: f64 = 1e-4;
    const NET_TOL: f64 = 1e-3;
    let start = Instant::now();
    let mut r = rng(2);
    let mut checks: Vec<(String, GradReport, f64)> = Vec::new();

    for spec in [
        ConvSpec::conv(2, 3, 3, 1, 1).unwrap(),
        ConvSpec::conv(2, 3, 3, 2, 1).unwrap(),
        ConvSpec::deconv(2, 3, 4, 2, 1).unwrap(),
        ConvSpec::deconv(2, 3, 3, 1, 0).unwrap(),
    ] {
        let x = random_tensor(&[2, 5, 5], &mut r, -1.0, 1.0);
        let w = random_tensor(&spec.weight_shape(), &mut r, -1.0, 1.0);
        let b = random_tensor(&[3], &mut r, -1.0, 1.0);
        let rep = check_gradients(&[x, w, b], H, 200, |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), &spec).unwrap();
            project(t, y, 1)
        });
        checks.push((format!("{spec:?}"), rep, PRIMITIVE_TOL));
    }

    // keep inputs clear of the ELU kink
    let x = random_tensor(&[3, 4, 4], &mut r, -2.0, 2.0);
    let x = Tensor::from_vec(
        &[3, 4, 4],
        x.data()
            .iter()
            .map(|&v| if v.abs() < 0.01 { v + 0.02 } else { v })
            .collect(),
    )
    .unwrap();
    let rep = check_gradients(std::slice::from_ref(&x), H, 100, |t, v| {
        let y = t.elu(v[0], 1.0).unwrap();
        project(t, y, 2)
    });
    checks.push(("elu".into(), rep, PRIMITIVE_TOL));
    let rep = check_gradients(std::slice::from_ref(&x), H, 100, |t, v| {
        let y = t.sigmoid(v[0]).unwrap();
        project(t, y, 3)
    });
    checks.push(("sigmoid".into(), rep, PRIMITIVE_TOL));
    let y = random_tensor(&[3, 4, 4], &mut r, -1.0, 1.0);
    let rep = check_gradients(&[x.clone(), y], H, 100, |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let s = t.add_scalar(s, 0.7).unwrap();
        let s = t.scale(s, -2.5).unwrap();
        project(t, s, 4)
    });
    checks.push(("add/add_scalar/scale".into(), rep, PRIMITIVE_TOL));
    let rep = check_gradients(&[x], H, 100, |t, v| {
        let s = t.channel_softmax(v[0]).unwrap();
        project(t, s, 5)
    });
    checks.push(("channel_softmax".into(), rep, PRIMITIVE_TOL));
    let feats = random_tensor(&[4, 3, 3], &mut r, -1.0, 1.0);
    let rep = check_gradients(&[feats], H, 100, |t, v| {
        let y = t.channel_normalize(v[0], 1e-6).unwrap();
        project(t, y, 6)
    });
    checks.push(("channel_normalize".into(), rep, PRIMITIVE_TOL));

    let logits = random_tensor(&[4, 3, 5], &mut r, -2.0, 2.0);
    let image = random_tensor(&[3, 3, 5], &mut r, 0.0, 1.0);
    let rep = check_gradients(&[logits, image], H, 100, |t, v| {
        let w = t.channel_softmax(v[0]).unwrap();
        let stack = t.shift_stack(v[1], 4).unwrap();
        let y = t.blend(w, stack).unwrap();
        project(t, y, 7)
    });
    checks.push(("shift_stack/blend".into(), rep, PRIMITIVE_TOL));

    let l = random_tensor(&[3, 4, 7], &mut r, -1.0, 1.0);
    let rt = random_tensor(&[3, 4, 7], &mut r, -1.0, 1.0);
    let rep = check_gradients(&[l, rt], H, 100, |t, v| {
        let y = t.correlate1d(v[0], v[1], 3).unwrap();
        project(t, y, 8)
    });
    checks.push(("correlate1d".into(), rep, PRIMITIVE_TOL));

    let p = random_tensor(&[2, 3, 3], &mut r, -1.0, 1.0);
    let target = random_tensor(&[2, 3, 3], &mut r, -1.0, 1.0);
    // keep residuals clear of the L1 kink
    let p = Tensor::from_vec(
        &[2, 3, 3],
        p.data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| if (a - b).abs() < 0.01 { a + 0.05 } else { a })
            .collect(),
    )
    .unwrap();
    for kind in [LossKind::L1, LossKind::L2] {
        let tgt = target.clone();
        let rep = check_gradients(std::slice::from_ref(&p), H, 100, move |t, v| {
            let c = t.constant(&tgt);
            t.loss(v[0], c, kind).unwrap()
        });
        checks.push((format!("loss {kind}"), rep, PRIMITIVE_TOL));
    }

    let sample: StereoSample<f64> = uniform_shift_pair(8, 8, 2, 0.1, &mut seeded_rng(1))
        .unwrap()
        .cast();
    let mut synth = SynthNet::<f64>::new(
        SynthNetConfig::encoder_decoder(8, 8, &[3, 4, 4], 4, 4).unwrap(),
        5,
    )
    .unwrap();
    let rep = check_param_gradients(&mut synth, &sample, LossKind::L2, 1e-4, 12);
    checks.push(("synthesis net 3x8x8".into(), rep, NET_TOL));
    let mut matcher =
        MatchNet::<f64>::new(MatchNetConfig::build(8, 8, &[3, 4], 4, 4).unwrap(), 7).unwrap();
    let rep = check_param_gradients(&mut matcher, &sample, LossKind::L2, 1e-4, 12);
    checks.push(("matching net 3x8x8".into(), rep, NET_TOL));

    for (name, rep, tol) in &checks {
        assert!(rep.checked > 0, "{name}: nothing checked");
        assert!(
            rep.max_rel_error < *tol,
            "{name}: {rep:?} (tolerance {tol})"
        );
    }
    within(start, Duration::from_secs(60), "gradient suite");
}

#[test]
fn c3_nms_matches_exhaustive_reference() {
    let start = Instant::now();
    let mut r = rng(3);
    for case in 0..1000 {
        let n = r.gen_range(0..=10);
        let dets: Vec<Detection> = (0..n)
            .map(|_| {
                // even integer grid so corner arithmetic is exact
                let bbox = BoundingBox {
                    x: r.gen_range(0..20) as f64,
                    y: r.gen_range(0..20) as f64,
                    w: 2.0 * r.gen_range(1..8) as f64,
                    h: 2.0 * r.gen_range(1..8) as f64,
                    confidence: 1.0,
                };
                let class_id = r.gen_range(0..3);
                Detection {
                    bbox,
                    class_id,
                    class_name: format!("c{class_id}"),
                    score: r.gen_range(0.0..1.0),
                    position: classify_position(&bbox, 100.0),
                }
            })
            .collect();
        let iou_thr = [0.0, 0.3, 0.45, 0.5, 0.7, 1.0][case % 6];
        let conf = [0.0, 0.25, 0.5][case % 3];
        let kept = nms(&dets, iou_thr, conf).unwrap();
        let expect: Vec<Detection> = nms_oracle(&dets, iou_thr, conf)
            .into_iter()
            .map(|i| dets[i].clone())
            .collect();
        assert_eq!(kept, expect, "case {case}");
    }
    within(start, Duration::from_secs(10), "NMS oracle");
}

#[test]
fn c4_depth_disparity_laws() {
    let unit = StereoRig::new(1.0, 1.0).unwrap();
    let z = disparity_to_depth(&DisparityMap::from_vec(1, 1, vec![1.0]).unwrap(), &unit).unwrap();
    assert_eq!(z.get(0, 0), 1.0);

    let mut r = rng(4);
    for _ in 0..200 {
        let rig = StereoRig::new(r.gen_range(0.01..2.0), r.gen_range(10.0..2000.0)).unwrap();
        let ds: Vec<f32> = (0..64).map(|_| r.gen_range(0.01f32..300.0)).collect();
        let disp = DisparityMap::from_vec(8, 8, ds.clone()).unwrap();
        let z = disparity_to_depth(&disp, &rig).unwrap();
        let k = rig.scale();
        for (&d, &zv) in ds.iter().zip(z.values()) {
            let rel = (zv as f64 * d as f64 - k).abs() / k;
            assert!(rel < 1e-6, "Z*d = {} vs {k}", zv as f64 * d as f64);
        }
        let back = depth_to_disparity(&z, &rig).unwrap();
        for (&d, &b) in ds.iter().zip(back.data()) {
            assert!(((b - d) / d).abs() < 1e-5, "{d} -> {b}");
        }
    }
}

#[test]
fn c5_disparity_introducing_layer() {
    let one_hot = |n: usize, h: usize, w: usize, k: usize| {
        let mut t = Tensor::<f64>::zeros(&[n, h, w]).unwrap();
        t.data_mut()[k * h * w..(k + 1) * h * w].fill(50.0);
        t
    };
    let image = random_tensor(&[3, 6, 11], &mut rng(5), 0.0, 1.0);
    let stack = shift_stack(&image, 8).unwrap();
    let per = image.len();
    for k in 0..8 {
        let out = disparity_select(&one_hot(8, 6, 11, k), &stack).unwrap();
        let want = &stack.data()[k * per..(k + 1) * per];
        if k == 0 {
            assert_eq!(want, image.data());
        }
        for (a, b) in out.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-4, "slice {k}: {a} vs {b}");
        }
    }

    let mut r = rng(55);
    for _ in 0..100 {
        let n = r.gen_range(1..8);
        let (h, w) = (r.gen_range(1..6), r.gen_range(n..12));
        let image = random_tensor(&[3, h, w], &mut r, -1.0, 1.0);
        let logits = random_tensor(&[n, h, w], &mut r, -5.0, 5.0);
        let stack = shift_stack(&image, n).unwrap();
        let out = disparity_select(&logits, &stack).unwrap();
        let per = image.len();
        for i in 0..per {
            let slices = (0..n).map(|k| stack.data()[k * per + i]);
            let lo = slices.clone().fold(f64::INFINITY, f64::min);
            let hi = slices.fold(f64::NEG_INFINITY, f64::max);
            let v = out.data()[i];
            assert!(
                lo - 1e-12 <= v && v <= hi + 1e-12,
                "{v} outside [{lo}, {hi}]"
            );
        }
    }
}

#[test]
fn c6_toy_training() {
    let start = Instant::now();
    let plan = |loss_kind, epochs| TrainPlan {
        loss_kind,
        epochs,
        optim: OptimConfig {
            learning_rate: 0.0003,
            weight_decay: 1e-6,
            batch_size: 1,
            method: Method::adam(),
        },
    };

    let cfg = SyntheticConfig::default();
    assert_eq!((cfg.height, cfg.width), (64, 64));
    // seeds follow the pipeline convention: 42, and 43 for the matcher
    let mut r = seeded_rng(42);
    let pairs: Vec<StereoSample<f32>> = (0..4)
        .map(|_| synthetic_pair(&cfg, &mut r).unwrap())
        .collect();
    let mut synth = SynthNet::<f32>::new(SynthNetConfig::for_size(64, 64).unwrap(), 42).unwrap();
    let report = train_network(&mut synth, &pairs, &plan(LossKind::L1, 200), 42).unwrap();
    let first = report.first().unwrap();
    let best = report
        .epoch_losses
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    assert!(
        best < 0.1 * first,
        "synthesis L1 fell only to {best:.5} from {first:.5} ({:.3})",
        best / first
    );

    let shifts = [4usize, 8, 12, 16];
    let mut r = seeded_rng(43);
    let fixtures: Vec<StereoSample<f32>> = shifts
        .iter()
        .map(|&k| uniform_shift_pair(64, 64, k, cfg.grain, &mut r).unwrap())
        .collect();
    let mut matcher = MatchNet::<f32>::new(MatchNetConfig::for_size(64, 64).unwrap(), 43).unwrap();
    train_network(&mut matcher, &fixtures, &plan(LossKind::L2, 300), 43).unwrap();
    for (k, s) in shifts.iter().zip(&fixtures) {
        let d = matcher.match_stereo(&s.left, &s.right).unwrap();
        let mae = d
            .data()
            .iter()
            .map(|&v| (v as f64 - *k as f64).abs())
            .sum::<f64>()
            / d.data().len() as f64;
        assert!(
            mae <= 0.2 * *k as f64,
            "shift {k}: mean absolute error {mae:.3}"
        );
    }
    within(start, Duration::from_secs(600), "toy training");
}

#[test]
fn c7_preprocessing() {
    assert_eq!(DEFAULT_SIGMA, 255.0);
    assert_eq!(ChannelStats::default().sigma, 255.0);
    let mut r = rng(7);
    let images: Vec<Tensor<f64>> = (0..5)
        .map(|i| random_tensor(&[3, 4 + i, 6], &mut r, 0.0, 255.0))
        .collect();
    let stats = channel_means(&images).unwrap();
    assert_eq!(stats.sigma, 255.0);
    let normalized: Vec<Tensor<f64>> = images
        .iter()
        .map(|im| normalize(im, &stats).unwrap())
        .collect();
    let after = channel_means(&normalized).unwrap();
    for m in after.means() {
        assert!(m.abs() < 1e-5, "channel mean {m}");
    }
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/assist")
}

fn read_all(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn c8_end_to_end_determinism() {
    let image = io::load_image(&fixture_dir().join("scene.ppm")).unwrap();
    let run = |execution: Execution| {
        let cfg =
            PipelineConfig::load(&fixture_dir().join("config.txt"), &BTreeMap::new(), 42).unwrap();
        let out = Pipeline::new(cfg).unwrap().run(&image, execution).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_artifacts(&out, dir.path()).unwrap();
        (out, read_all(dir.path()))
    };
    let (first, first_files) = run(Execution::Concurrent);
    let (second, second_files) = run(Execution::Concurrent);
    assert_eq!(first_files.len(), 7);
    assert_eq!(first_files, second_files);
    assert_eq!(first, second);
    assert_ne!(first.announcement.text, "path clear");
    for order in [Execution::DetectorFirst, Execution::DepthFirst] {
        let (out, files) = run(order);
        assert_eq!(out, first, "{order:?}");
        assert_eq!(files, first_files, "{order:?}");
    }
}

/// Every clause the grammar can produce for `classes`: each class at each
/// position and each spoken distance, including the clamped ends.
fn every_clause(classes: &[String]) -> Vec<Obstacle> {
    let mut depths: Vec<f64> = (1..=MAX_SPOKEN_METERS).map(f64::from).collect();
    depths.extend([0.2, 45.0, f64::INFINITY]);
    let mut out = Vec::new();
    for label in classes {
        for position in [Position::Left, Position::Front, Position::Right] {
            for &depth_m in &depths {
                out.push(Obstacle {
                    label: label.clone(),
                    depth_m,
                    position,
                    score: 1.0,
                });
            }
        }
    }
    out
}

#[test]
fn c9_closed_vocabulary_audio() {
    let fixture_classes = io::load_class_list(&fixture_dir().join("classes.txt")).unwrap();
    let coco: Vec<String> = COCO_CLASSES.iter().map(|s| s.to_string()).collect();
    for classes in [fixture_classes, coco] {
        let tmp = tempfile::tempdir().unwrap();
        let catalog = tmp.path();
        let vocab = vocabulary(&classes);
        write_stub_catalog(&vocab, catalog).unwrap();
        assert!(check_catalog(&vocab, catalog).is_empty());

        let clauses = every_clause(&classes);
        // single clauses cover every token; longer sentences only concatenate them
        for ob in &clauses {
            let ann =
                audio_lookup(&compose_announcement(std::slice::from_ref(ob)), catalog).unwrap();
            assert_eq!(ann.audio_paths.len(), ann.tokens.len());
        }
        let ann = audio_lookup(&compose_announcement(&clauses[..3]), catalog).unwrap();
        assert_eq!(ann.tokens.len(), 15);
        audio_lookup(&compose_announcement(&[]), catalog).unwrap();

        let victim = classes[classes.len() / 2].clone();
        fs::remove_file(catalog.join(vision_core::assist::audio_file_name(&victim))).unwrap();
        let problems = check_catalog(&vocab, catalog);
        assert_eq!(problems.len(), 1, "{problems:?}");
        assert!(matches!(&problems[0], Error::MissingAudio(t) if *t == victim));
        let mut missing = 0;
        for ob in &clauses {
            match audio_lookup(&compose_announcement(std::slice::from_ref(ob)), catalog) {
                Ok(_) => assert_ne!(ob.label, victim),
                Err(Error::MissingAudio(t)) => {
                    assert_eq!(t, victim);
                    missing += 1;
                }
                Err(e) => panic!("unexpected {e}"),
            }
        }
        assert_eq!(missing, 3 * (MAX_SPOKEN_METERS as usize + 3));
    }
}
