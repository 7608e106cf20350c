use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::sigmoid;
use crate::tensor::Tensor;

use super::{Anchor, BoundingBox};

/// One anchor slot of a detection head, before decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPrediction {
    pub t_x: f64,
    pub t_y: f64,
    pub t_w: f64,
    pub t_h: f64,
    pub t_o: f64,
    pub class_logits: Vec<f64>,
    /// `(c_x, c_y)` grid indices of the owning cell.
    pub cell: (usize, usize),
    pub anchor: Anchor,
    pub stride: usize,
}

/// A decoded box together with its per-class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedBox {
    pub bbox: BoundingBox,
    pub class_probs: Vec<f64>,
    pub cell: (usize, usize),
    pub anchor_index: usize,
    pub stride: usize,
}

impl RawPrediction {
    /// Center offset through a sigmoid within the cell, size as the anchor
    /// scaled by `exp(t)`, objectness and classes through independent sigmoids.
    pub fn decode(&self) -> (BoundingBox, Vec<f64>) {
        let s = self.stride as f64;
        let bbox = BoundingBox {
            x: (sigmoid(self.t_x) + self.cell.0 as f64) * s,
            y: (sigmoid(self.t_y) + self.cell.1 as f64) * s,
            w: self.anchor.width * self.t_w.exp(),
            h: self.anchor.height * self.t_h.exp(),
            confidence: sigmoid(self.t_o),
        };
        let probs = self.class_logits.iter().map(|&z| sigmoid(z)).collect();
        (bbox, probs)
    }
}

/// Splits a `[B*(5+C), S, S]` head into raw predictions, ordered by cell row,
/// cell column, then anchor.
pub fn raw_predictions<T: Scalar>(
    head: &Tensor<T>,
    anchors: &[Anchor],
    stride: usize,
    input_size: usize,
) -> Result<Vec<RawPrediction>> {
    let (channels, sy, sx) = head.dims3()?;
    let b = anchors.len();
    if b == 0 {
        return Err(Error::invalid("at least one anchor per stride is required"));
    }
    if channels % b != 0 || channels / b < 6 {
        return Err(Error::shape(format!(
            "head has {channels} channels, not B*(5+C) with B = {b} and C >= 1"
        )));
    }
    if stride == 0 || sy != sx || sx * stride != input_size {
        return Err(Error::shape(format!(
            "head grid {sy}x{sx} at stride {stride} does not cover a {input_size}px input"
        )));
    }
    for a in anchors {
        a.validate()?;
    }
    let per = channels / b;
    let plane = sy * sx;
    let data = head.data();
    let at = |ch: usize, cell: usize| data[ch * plane + cell].as_f64();
    let mut out = Vec::with_capacity(plane * b);
    for cy in 0..sy {
        for cx in 0..sx {
            let cell = cy * sx + cx;
            for (a, anchor) in anchors.iter().enumerate() {
                let base = a * per;
                out.push(RawPrediction {
                    t_x: at(base, cell),
                    t_y: at(base + 1, cell),
                    t_w: at(base + 2, cell),
                    t_h: at(base + 3, cell),
                    t_o: at(base + 4, cell),
                    class_logits: (5..per).map(|k| at(base + k, cell)).collect(),
                    cell: (cx, cy),
                    anchor: *anchor,
                    stride,
                });
            }
        }
    }
    Ok(out)
}

pub fn decode_predictions<T: Scalar>(
    head: &Tensor<T>,
    anchors: &[Anchor],
    stride: usize,
    input_size: usize,
) -> Result<Vec<DecodedBox>> {
    let b = anchors.len();
    Ok(raw_predictions(head, anchors, stride, input_size)?
        .into_iter()
        .enumerate()
        .map(|(i, raw)| {
            let (bbox, class_probs) = raw.decode();
            DecodedBox {
                bbox,
                class_probs,
                cell: raw.cell,
                anchor_index: i % b,
                stride,
            }
        })
        .collect())
}

/// Number of anchor boxes per stride and in total for a square input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Census {
    pub per_stride: Vec<usize>,
    pub total: usize,
}

pub fn anchor_census(
    input_size: usize,
    boxes_per_cell: usize,
    strides: &[usize],
) -> Result<Census> {
    let per_stride = strides
        .iter()
        .map(|&s| {
            if s == 0 || !input_size.is_multiple_of(s) {
                Err(Error::invalid(format!(
                    "input size {input_size} is not divisible by stride {s}"
                )))
            } else {
                let grid = input_size / s;
                Ok(grid * grid * boxes_per_cell)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let total = per_stride.iter().sum();
    Ok(Census { per_stride, total })
}
