//! Monocular depth: right-view synthesis, stereo matching and triangulation.
//!
//! The synthesis network predicts a per-pixel distribution over horizontal
//! shifts of the left image and blends the shifted copies into a right view.
//! The matcher correlates features of the two views and regresses disparity,
//! which [`disparity_to_depth`] turns into metric depth.

mod layers;
mod matcher;
mod synth;
mod synthetic;
mod train;

pub use layers::{Activation, LayerSpec, ParamSet};
pub use matcher::{MatchNet, MatchNetConfig};
pub use synth::{disparity_select, shift_stack, SynthNet, SynthNetConfig, SynthOutputs};
pub use synthetic::{random_texture, synthetic_pair, uniform_shift_pair, SyntheticConfig};
pub use train::{train_network, StereoSample, TrainPlan, TrainReport, Trainable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of shifted views blended by the synthesis network.
pub const SELECTION_CHANNELS: usize = 33;
/// Largest disparity scored by the matcher's correlation.
pub const MAX_DISPARITY: usize = SELECTION_CHANNELS - 1;
/// Side length of the synthesis network's input.
pub const SYNTH_INPUT_SIZE: usize = 300;

/// Baseline in meters and focal length in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub baseline_m: f64,
    pub focal_px: f64,
}

impl StereoRig {
    pub fn new(baseline_m: f64, focal_px: f64) -> Result<Self> {
        let rig = Self {
            baseline_m,
            focal_px,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("baseline", self.baseline_m),
            ("focal length", self.focal_px),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `b * F`, the numerator of the depth law.
    pub fn scale(&self) -> f64 {
        self.baseline_m * self.focal_px
    }
}

/// Per-pixel disparity in pixels, shape `[1, H, W]`. Zero means unknown or at
/// infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    values: Tensor<f32>,
}

impl DisparityMap {
    pub fn new(values: Tensor<f32>) -> Result<Self> {
        let (c, _, _) = values.dims3()?;
        if c != 1 {
            return Err(Error::shape(format!(
                "disparity map must have one channel, got {c}"
            )));
        }
        if let Some(v) = values.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::invalid(format!("negative disparity {v}")));
        }
        Ok(Self { values })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Tensor::from_vec(&[1, height, width], data)?)
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Tensor<f32> {
        &self.values
    }

    pub fn data(&self) -> &[f32] {
        self.values.data()
    }

    pub fn mean(&self) -> f64 {
        self.data().iter().map(|&v| v as f64).sum::<f64>() / self.data().len() as f64
    }

    /// Multiplies every value by `factor`, e.g. after resizing horizontally.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(Error::invalid(format!(
                "disparity scale must be non-negative, got {factor}"
            )));
        }
        let data = self
            .data()
            .iter()
            .map(|&v| (v as f64 * factor) as f32)
            .collect();
        Self::from_vec(self.height(), self.width(), data)
    }
}

/// Per-pixel depth in meters. Pixels with zero disparity hold `f32::INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::shape(format!(
                "depth map {height}x{width} cannot hold {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| v.is_nan() || **v <= 0.0) {
            return Err(Error::invalid(format!(
                "depth values must be positive, got {v}"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn uniform(height: usize, width: usize, meters: f32) -> Result<Self> {
        Self::new(height, width, vec![meters; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// `Z = b * F / d` per pixel, with `d = 0` mapped to infinity.
pub fn disparity_to_depth(d: &DisparityMap, rig: &StereoRig) -> Result<DepthMap> {
    rig.validate()?;
    let bf = rig.scale();
    let values = d
        .data()
        .iter()
        .map(|&v| {
            if v < 0.0 {
                Err(Error::invalid(format!("negative disparity {v}")))
            } else if v == 0.0 {
                Ok(f32::INFINITY)
            } else {
                Ok((bf / v as f64) as f32)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    DepthMap::new(d.height(), d.width(), values)
}

/// Inverse of [`disparity_to_depth`]; infinite depth maps back to zero.
pub fn depth_to_disparity(z: &DepthMap, rig: &StereoRig) -> Result<DisparityMap> {
    rig.validate()?;
    let bf = rig.scale();
    let data = z
        .values()
        .iter()
        .map(|&v| {
            if v.is_infinite() {
                0.0
            } else {
                (bf / v as f64) as f32
            }
        })
        .collect();
    DisparityMap::from_vec(z.height(), z.width(), data)
}
