//! Obstacle fusion, proximity filtering and spoken announcements.
//!
//! Announcements use a closed grammar so every sentence can be played back
//! from a finite catalog of pre-recorded clips, one per token.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::depth::DepthMap;
use crate::detector::{Detection, Position};
use crate::error::{Error, Result};

pub const DEFAULT_NEAR_THRESHOLD_M: f64 = 3.0;
pub const DEFAULT_MAX_ANNOUNCED: usize = 3;
/// Spoken distances are clamped to `1..=MAX_SPOKEN_METERS`.
pub const MAX_SPOKEN_METERS: u32 = 30;
pub const PATH_CLEAR: &str = "path clear";
const AT: &str = "at";
const METERS: &str = "meters";
const CLAUSE_SEPARATOR: &str = ". ";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub label: String,
    /// Meters; infinite when no depth was available inside the box.
    pub depth_m: f64,
    pub position: Position,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssistConfig {
    pub near_threshold_m: f64,
    pub max_announced: usize,
    pub depth_aggregator: Aggregator,
}

impl Default for AssistConfig {
    fn default() -> Self {
        Self {
            near_threshold_m: DEFAULT_NEAR_THRESHOLD_M,
            max_announced: DEFAULT_MAX_ANNOUNCED,
            depth_aggregator: Aggregator::Median,
        }
    }
}

impl AssistConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.near_threshold_m > 0.0) {
            return Err(Error::Config(format!(
                "near_threshold_m must be positive, got {}",
                self.near_threshold_m
            )));
        }
        Ok(())
    }
}

/// Sentence, its spoken tokens in order, and (after [`audio_lookup`]) one
/// clip per token.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Announcement {
    pub text: String,
    pub tokens: Vec<String>,
    pub audio_paths: Vec<PathBuf>,
}

pub fn position_words(p: Position) -> &'static str {
    match p {
        Position::Left => "to your left",
        Position::Front => "ahead",
        Position::Right => "to your right",
    }
}

/// Median of the values at even counts is the mean of the middle pair.
fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Pixel index range `[lo, hi)` covered by the interval `[a, b)`, clipped to
/// `0..len`.
fn pixel_span(a: f64, b: f64, len: usize) -> Option<(usize, usize)> {
    let lo = a.floor().max(0.0);
    let hi = b.ceil().min(len as f64);
    (hi > lo).then_some((lo as usize, hi as usize))
}

/// One obstacle per detection that overlaps the depth map, at the median
/// finite depth inside its box. Boxes are in depth-map pixel coordinates.
pub fn fuse_depth(dets: &[Detection], depth: &DepthMap) -> Vec<Obstacle> {
    let mut out = Vec::with_capacity(dets.len());
    for d in dets {
        let (x0, y0, x1, y1) = d.bbox.corners();
        let spans = pixel_span(x0, x1, depth.width()).zip(pixel_span(y0, y1, depth.height()));
        let Some(((xa, xb), (ya, yb))) = spans else {
            log::warn!(
                "skipping {} at ({:.1}, {:.1}): box lies outside the {}x{} depth map",
                d.class_name,
                d.bbox.x,
                d.bbox.y,
                depth.width(),
                depth.height()
            );
            continue;
        };
        let finite: Vec<f64> = (ya..yb)
            .flat_map(|y| (xa..xb).map(move |x| (y, x)))
            .map(|(y, x)| depth.get(y, x) as f64)
            .filter(|v| v.is_finite())
            .collect();
        out.push(Obstacle {
            label: d.class_name.clone(),
            depth_m: median(finite).unwrap_or(f64::INFINITY),
            position: d.position,
            score: d.score,
        });
    }
    out
}

/// Obstacles within the threshold, nearest first, at most `max_announced`.
pub fn proximity_filter(obs: &[Obstacle], cfg: &AssistConfig) -> Vec<Obstacle> {
    let mut near: Vec<Obstacle> = obs
        .iter()
        .filter(|o| o.depth_m <= cfg.near_threshold_m)
        .cloned()
        .collect();
    near.sort_by(|a, b| a.depth_m.total_cmp(&b.depth_m));
    near.truncate(cfg.max_announced);
    near
}

/// Whole meters as spoken: nearest integer, at least 1, at most
/// [`MAX_SPOKEN_METERS`].
pub fn spoken_meters(depth_m: f64) -> u32 {
    if depth_m.is_nan() {
        return MAX_SPOKEN_METERS;
    }
    depth_m.round().clamp(1.0, MAX_SPOKEN_METERS as f64) as u32
}

/// One clause per obstacle, `"<label> <position> at <D> meters"`, joined by
/// `". "`; `"path clear"` when there is nothing to report.
pub fn compose_announcement(obs: &[Obstacle]) -> Announcement {
    if obs.is_empty() {
        return Announcement {
            text: PATH_CLEAR.into(),
            tokens: vec![PATH_CLEAR.into()],
            audio_paths: Vec::new(),
        };
    }
    let mut clauses = Vec::with_capacity(obs.len());
    let mut tokens = Vec::with_capacity(obs.len() * 5);
    for o in obs {
        let clause = [
            o.label.clone(),
            position_words(o.position).to_string(),
            AT.to_string(),
            spoken_meters(o.depth_m).to_string(),
            METERS.to_string(),
        ];
        clauses.push(clause.join(" "));
        tokens.extend(clause);
    }
    Announcement {
        text: clauses.join(CLAUSE_SEPARATOR),
        tokens,
        audio_paths: Vec::new(),
    }
}

/// `"To Your Left"` becomes `"to_your_left.wav"`.
pub fn audio_file_name(token: &str) -> String {
    format!("{}.wav", token.to_lowercase().replace(' ', "_"))
}

/// Resolves each token to its clip in `catalog_dir`. The first token
/// without a file yields [`Error::MissingAudio`].
pub fn audio_lookup(ann: &Announcement, catalog_dir: &Path) -> Result<Announcement> {
    if !catalog_dir.is_dir() {
        return Err(Error::Config(format!(
            "audio catalog {} is not a directory",
            catalog_dir.display()
        )));
    }
    let audio_paths = ann
        .tokens
        .iter()
        .map(|t| {
            let p = catalog_dir.join(audio_file_name(t));
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::MissingAudio(t.clone()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Announcement {
        audio_paths,
        ..ann.clone()
    })
}

/// Every token the grammar can emit for a class list.
pub fn vocabulary<S: AsRef<str>>(class_names: &[S]) -> BTreeSet<String> {
    let mut v: BTreeSet<String> = class_names.iter().map(|s| s.as_ref().to_string()).collect();
    for p in [Position::Left, Position::Front, Position::Right] {
        v.insert(position_words(p).into());
    }
    v.extend((1..=MAX_SPOKEN_METERS).map(|n| n.to_string()));
    v.extend([AT, METERS, PATH_CLEAR].map(String::from));
    v
}

/// Tokens of `vocab` with no clip in `catalog_dir`, one
/// [`Error::MissingAudio`] each.
pub fn check_catalog(vocab: &BTreeSet<String>, catalog_dir: &Path) -> Vec<Error> {
    vocab
        .iter()
        .filter(|t| !catalog_dir.join(audio_file_name(t)).is_file())
        .map(|t| Error::MissingAudio(t.clone()))
        .collect()
}

/// A silent 8 kHz mono 16-bit WAV with no samples.
fn silent_wav() -> Vec<u8> {
    let mut b = Vec::with_capacity(44);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&36u32.to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&8000u32.to_le_bytes());
    b.extend_from_slice(&16000u32.to_le_bytes());
    b.extend_from_slice(&2u16.to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&0u32.to_le_bytes());
    b
}

/// Writes a placeholder clip for every token, returning the files written.
pub fn write_stub_catalog(vocab: &BTreeSet<String>, catalog_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(catalog_dir).map_err(|e| Error::io(catalog_dir, e))?;
    let wav = silent_wav();
    vocab
        .iter()
        .map(|t| {
            let p = catalog_dir.join(audio_file_name(t));
            fs::write(&p, &wav).map_err(|e| Error::io(&p, e))?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::BoundingBox;

    fn obstacle(label: &str, position: Position, depth_m: f64) -> Obstacle {
        Obstacle {
            label: label.into(),
            depth_m,
            position,
            score: 0.9,
        }
    }

    fn det_at(x0: f64, y0: f64, x1: f64, y1: f64) -> Detection {
        let bbox = BoundingBox {
            x: (x0 + x1) / 2.0,
            y: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
            confidence: 1.0,
        };
        Detection {
            bbox,
            class_id: 0,
            class_name: "chair".into(),
            score: 0.8,
            position: Position::Front,
        }
    }

    #[test]
    fn fuse_takes_the_median() {
        let depth = DepthMap::new(1, 3, vec![1.0, 9.0, 2.0]).unwrap();
        let obs = fuse_depth(&[det_at(0.0, 0.0, 3.0, 1.0)], &depth);
        assert_eq!(obs[0].depth_m, 2.0);
        let uniform = DepthMap::uniform(4, 4, 5.0).unwrap();
        let obs = fuse_depth(
            &[det_at(0.5, 0.5, 2.5, 3.0), det_at(3.2, 3.2, 3.4, 3.4)],
            &uniform,
        );
        assert!(obs.iter().all(|o| o.depth_m == 5.0));
        assert!(fuse_depth(&[], &uniform).is_empty());
    }

    #[test]
    fn fuse_handles_infinite_and_outside_boxes() {
        let depth = DepthMap::new(1, 4, vec![f32::INFINITY, f32::INFINITY, 2.0, 4.0]).unwrap();
        let obs = fuse_depth(
            &[det_at(0.0, 0.0, 2.0, 1.0), det_at(1.0, 0.0, 4.0, 1.0)],
            &depth,
        );
        assert!(obs[0].depth_m.is_infinite());
        assert_eq!(obs[1].depth_m, 3.0);
        assert!(fuse_depth(
            &[det_at(5.0, 0.0, 8.0, 1.0), det_at(-3.0, -3.0, -1.0, -1.0)],
            &depth
        )
        .is_empty());
    }

    #[test]
    fn proximity_examples() {
        let cfg = AssistConfig::default();
        let obs = [
            obstacle("a", Position::Left, 4.0),
            obstacle("b", Position::Left, 2.0),
        ];
        let near = proximity_filter(&obs, &cfg);
        assert_eq!(near.len(), 1);
        assert_eq!(near[0].label, "b");
        assert!(
            proximity_filter(&[obstacle("c", Position::Front, f64::INFINITY)], &cfg).is_empty()
        );
        let many: Vec<_> = (0..6)
            .map(|i| obstacle("d", Position::Front, 2.5 - 0.1 * i as f64))
            .collect();
        let near = proximity_filter(&many, &cfg);
        assert_eq!(near.len(), 3);
        assert!(near.windows(2).all(|p| p[0].depth_m <= p[1].depth_m));
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(compose_announcement(&[]).text, "path clear");
        assert_eq!(
            compose_announcement(&[obstacle("chair", Position::Front, 2.4)]).text,
            "chair ahead at 2 meters"
        );
        let a = compose_announcement(&[
            obstacle("person", Position::Left, 1.2),
            obstacle("car", Position::Right, 2.9),
        ]);
        assert_eq!(
            a.text,
            "person to your left at 1 meters. car to your right at 3 meters"
        );
        assert_eq!(a.tokens.len(), 10);
        assert_eq!(spoken_meters(0.2), 1);
        assert_eq!(spoken_meters(f64::INFINITY), 30);
    }

    #[test]
    fn file_names() {
        assert_eq!(audio_file_name("chair"), "chair.wav");
        assert_eq!(audio_file_name("to your left"), "to_your_left.wav");
        assert_eq!(audio_file_name("Teddy Bear"), "teddy_bear.wav");
    }

    #[test]
    fn lookup_reports_the_missing_token() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = vocabulary(&["chair"]);
        write_stub_catalog(&vocab, dir.path()).unwrap();
        let ann = compose_announcement(&[obstacle("chair", Position::Left, 2.0)]);
        let done = audio_lookup(&ann, dir.path()).unwrap();
        assert_eq!(done.audio_paths.len(), 5);
        assert!(done.audio_paths[1].ends_with("to_your_left.wav"));

        let ann = compose_announcement(&[obstacle("sofa", Position::Left, 2.0)]);
        match audio_lookup(&ann, dir.path()) {
            Err(Error::MissingAudio(t)) => assert_eq!(t, "sofa"),
            other => panic!("expected MissingAudio, got {other:?}"),
        }
        assert!(check_catalog(&vocab, dir.path()).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(AssistConfig::default().validate().is_ok());
        let bad = AssistConfig {
            near_threshold_m: 0.0,
            ..AssistConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
