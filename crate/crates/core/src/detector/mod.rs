//! YOLO-style detection post-processing.
//!
//! Raw head tensors (one per stride) are decoded into center-size boxes,
//! scored, suppressed per class, tagged with a left/front/right position and
//! filtered by the active indoor/outdoor mode.

pub mod classes;
mod decode;
mod nms;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use decode::{
    anchor_census, decode_predictions, raw_predictions, Census, DecodedBox, RawPrediction,
};
pub use nms::{iou, nms, rank_order};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.45;
pub const DEFAULT_INPUT_SIZE: usize = 416;

/// The nine COCO anchors of YOLOv3, three per stride, for a 416 input.
pub fn default_anchors() -> Vec<(usize, Vec<Anchor>)> {
    let table: [(usize, [(f64, f64); 3]); 3] = [
        (32, [(116.0, 90.0), (156.0, 198.0), (373.0, 326.0)]),
        (16, [(30.0, 61.0), (62.0, 45.0), (59.0, 119.0)]),
        (8, [(10.0, 13.0), (16.0, 30.0), (33.0, 23.0)]),
    ];
    table
        .iter()
        .map(|(s, dims)| {
            (
                *s,
                dims.iter()
                    .map(|&(width, height)| Anchor { width, height })
                    .collect(),
            )
        })
        .collect()
}

/// Prior box size in input-image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub width: f64,
    pub height: f64,
}

impl Anchor {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        let a = Self { width, height };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width > 0.0
            && self.height > 0.0
            && self.width.is_finite()
            && self.height.is_finite()
        {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "anchor dimensions must be positive: {self:?}"
            )))
        }
    }
}

/// Center-size box in input-image pixels with its objectness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<()> {
        if self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "box width and height must be positive: {}x{}",
                self.w, self.h
            )))
        }
    }

    /// `(x0, y0, x1, y1)`
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        (self.x - hw, self.y - hh, self.x + hw, self.y + hh)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            x: self.x * sx,
            y: self.y * sy,
            w: self.w * sx,
            h: self.h * sy,
            confidence: self.confidence,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Left,
    Front,
    Right,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Position::Left => "left",
            Position::Front => "front",
            Position::Right => "right",
        })
    }
}

/// Thirds of the image width; pixels on a boundary count as in front.
pub fn classify_position(bbox: &BoundingBox, image_width: f64) -> Position {
    if 3.0 * bbox.x < image_width {
        Position::Left
    } else if 3.0 * bbox.x > 2.0 * image_width {
        Position::Right
    } else {
        Position::Front
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub class_id: usize,
    pub class_name: String,
    pub score: f64,
    pub position: Position,
}

impl Detection {
    /// Best class under independent per-class probabilities; ties go to the
    /// smaller class id. `score = objectness * class probability`.
    pub fn from_decoded(
        decoded: &DecodedBox,
        class_names: &[String],
        image_width: f64,
    ) -> Result<Self> {
        if decoded.class_probs.len() != class_names.len() {
            return Err(Error::shape(format!(
                "head predicts {} classes but {} class names are configured",
                decoded.class_probs.len(),
                class_names.len()
            )));
        }
        let (class_id, prob) = decoded.class_probs.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, p)| if p > best.1 { (i, p) } else { best },
        );
        Ok(Self {
            bbox: decoded.bbox,
            class_id,
            class_name: class_names[class_id].clone(),
            score: decoded.bbox.confidence * prob,
            position: classify_position(&decoded.bbox, image_width),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Indoor,
    Outdoor,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "indoor" => Ok(Mode::Indoor),
            "outdoor" => Ok(Mode::Outdoor),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Indoor => "indoor",
            Mode::Outdoor => "outdoor",
        })
    }
}

/// Classes reported in the active mode.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeConfig {
    pub mode: Mode,
    pub allowed_classes: BTreeSet<String>,
}

impl ModeConfig {
    /// Fails when an allowed class is not part of the model's class list.
    pub fn new<S: AsRef<str>>(mode: Mode, allowed: &[S], class_names: &[String]) -> Result<Self> {
        let mut allowed_classes = BTreeSet::new();
        for name in allowed {
            let name = name.as_ref();
            if !class_names.iter().any(|c| c == name) {
                return Err(Error::Config(format!(
                    "{mode} mode lists unknown class {name:?}"
                )));
            }
            allowed_classes.insert(name.to_string());
        }
        Ok(Self {
            mode,
            allowed_classes,
        })
    }

    /// Default partitions over the 80-class vocabulary.
    pub fn coco_default(mode: Mode) -> Self {
        let names: Vec<&str> = match mode {
            Mode::Indoor => classes::default_indoor(),
            Mode::Outdoor => classes::default_outdoor(),
        };
        Self {
            mode,
            allowed_classes: names.into_iter().map(String::from).collect(),
        }
    }
}

pub fn mode_filter(dets: &[Detection], cfg: &ModeConfig) -> Vec<Detection> {
    dets.iter()
        .filter(|d| cfg.allowed_classes.contains(&d.class_name))
        .cloned()
        .collect()
}

/// Everything needed to turn head tensors into filtered detections.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub input_size: usize,
    /// Anchors per stride, in the order heads are supplied.
    pub anchors: Vec<(usize, Vec<Anchor>)>,
    pub class_names: Vec<String>,
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub mode: ModeConfig,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Config("class list is empty".into()));
        }
        let unique: BTreeSet<&String> = self.class_names.iter().collect();
        if unique.len() != self.class_names.len() {
            return Err(Error::Config("class list has duplicate names".into()));
        }
        for (name, t) in [
            ("conf_threshold", self.conf_threshold),
            ("iou_threshold", self.iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {t}")));
            }
        }
        if self.anchors.is_empty() {
            return Err(Error::Config("no anchors configured".into()));
        }
        for (stride, anchors) in &self.anchors {
            if *stride == 0 || !self.input_size.is_multiple_of(*stride) {
                return Err(Error::Config(format!(
                    "input size {} is not divisible by stride {stride}",
                    self.input_size
                )));
            }
            if anchors.is_empty() {
                return Err(Error::Config(format!("stride {stride} has no anchors")));
            }
            for a in anchors {
                a.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        for c in &self.mode.allowed_classes {
            if !self.class_names.contains(c) {
                return Err(Error::Config(format!("mode lists unknown class {c:?}")));
            }
        }
        Ok(())
    }

    pub fn anchors_for(&self, stride: usize) -> Result<&[Anchor]> {
        self.anchors
            .iter()
            .find(|(s, _)| *s == stride)
            .map(|(_, a)| a.as_slice())
            .ok_or_else(|| Error::Config(format!("no anchors configured for stride {stride}")))
    }
}

/// Decodes every head, then applies suppression and the mode filter.
pub fn detect<T: Scalar>(
    heads: &[(usize, Tensor<T>)],
    cfg: &DetectorConfig,
) -> Result<Vec<Detection>> {
    let width = cfg.input_size as f64;
    let mut dets = Vec::new();
    for (stride, head) in heads {
        let anchors = cfg.anchors_for(*stride)?;
        for decoded in decode_predictions(head, anchors, *stride, cfg.input_size)? {
            let d = Detection::from_decoded(&decoded, &cfg.class_names, width)?;
            // low scores cannot survive suppression; drop them before the
            // quadratic pass
            if d.score >= cfg.conf_threshold {
                dets.push(d);
            }
        }
    }
    let kept = nms(&dets, cfg.iou_threshold, cfg.conf_threshold)?;
    Ok(mode_filter(&kept, &cfg.mode))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x: f64) -> BoundingBox {
        BoundingBox {
            x,
            y: 10.0,
            w: 4.0,
            h: 4.0,
            confidence: 1.0,
        }
    }

    fn det(name: &str) -> Detection {
        Detection {
            bbox: at(1.0),
            class_id: 0,
            class_name: name.into(),
            score: 0.9,
            position: Position::Front,
        }
    }

    #[test]
    fn positions() {
        assert_eq!(classify_position(&at(150.0), 300.0), Position::Front);
        assert_eq!(classify_position(&at(0.0), 300.0), Position::Left);
        assert_eq!(classify_position(&at(100.0), 300.0), Position::Front);
        assert_eq!(classify_position(&at(200.0), 300.0), Position::Front);
        assert_eq!(classify_position(&at(99.9), 300.0), Position::Left);
        assert_eq!(classify_position(&at(200.1), 300.0), Position::Right);
        assert_eq!(classify_position(&at(300.0), 300.0), Position::Right);
    }

    #[test]
    fn mode_examples() {
        let indoor = ModeConfig::coco_default(Mode::Indoor);
        let outdoor = ModeConfig::coco_default(Mode::Outdoor);
        let dets = vec![det("car"), det("book"), det("person")];
        let names = |v: Vec<Detection>| v.into_iter().map(|d| d.class_name).collect::<Vec<_>>();
        assert_eq!(names(mode_filter(&dets, &indoor)), vec!["book", "person"]);
        assert_eq!(names(mode_filter(&dets, &outdoor)), vec!["car", "person"]);
        assert!(mode_filter(&[], &indoor).is_empty());
    }

    #[test]
    fn unknown_mode_class_is_a_config_error() {
        let names = vec!["person".to_string()];
        assert!(matches!(
            ModeConfig::new(Mode::Indoor, &["unicorn"], &names),
            Err(Error::Config(_))
        ));
        assert!(ModeConfig::new(Mode::Indoor, &["person"], &names).is_ok());
    }

    #[test]
    fn best_class_and_score() {
        let decoded = DecodedBox {
            bbox: BoundingBox {
                confidence: 0.8,
                ..at(50.0)
            },
            class_probs: vec![0.2, 0.9, 0.9],
            cell: (0, 0),
            anchor_index: 0,
            stride: 32,
        };
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let d = Detection::from_decoded(&decoded, &names, 300.0).unwrap();
        assert_eq!(d.class_id, 1);
        assert!((d.score - 0.72).abs() < 1e-12);
        assert!(d.score <= d.bbox.confidence);
        assert_eq!(d.position, Position::Left);
    }
}
