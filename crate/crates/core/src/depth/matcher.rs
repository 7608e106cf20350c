use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{trace_sizes, upsample_spec, Activation, LayerSpec, ParamSet, Stack};
use super::train::{StereoSample, Trainable};
use super::{DisparityMap, MAX_DISPARITY};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{seeded_rng, ConvSpec, LossKind, Tape, Tensor, Var};

const FEATURE_EPS: f64 = 1e-6;

/// Layer stacks of the stereo matcher.
///
/// Both views go through the same feature tower; the correlation volume of
/// the two feature maps feeds the head, whose single output channel `z`
/// becomes disparity `elu(z, alpha) + alpha >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchNetConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub tower: Vec<LayerSpec>,
    pub max_disparity: usize,
    pub head: Vec<LayerSpec>,
    /// Scale tower features to unit length per pixel before correlating.
    pub normalize_features: bool,
    /// Multiplier on the correlation volume before the head.
    pub correlation_gain: f64,
    pub elu_alpha: f64,
    pub output_alpha: f64,
}

impl MatchNetConfig {
    /// Default architecture: a 3-16-32 tower, correlation up to 32 pixels,
    /// three convolutions (two of stride 2) and two deconvolutions back to
    /// full resolution.
    pub fn for_size(height: usize, width: usize) -> Result<Self> {
        Self::build(height, width, &[3, 16, 32], MAX_DISPARITY, 32)
    }

    /// Tower through `tower_widths` at stride 1, correlation with
    /// `max_disparity`, and a head of width `head_width`. Features are
    /// normalized and the volume is scaled by the feature width, so the head
    /// sees cosine similarities.
    pub fn build(
        height: usize,
        width: usize,
        tower_widths: &[usize],
        max_disparity: usize,
        head_width: usize,
    ) -> Result<Self> {
        if tower_widths.len() < 2 || tower_widths[0] != 3 {
            return Err(Error::Config(
                "tower widths must start at 3 and have a layer".into(),
            ));
        }
        let tower = tower_widths
            .windows(2)
            .map(|p| {
                Ok(LayerSpec::new(
                    ConvSpec::conv(p[0], p[1], 3, 1, 1)?,
                    Activation::Elu,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let down1 = ConvSpec::conv(max_disparity + 1, head_width, 3, 2, 1)?;
        let s1 = down1.output_size(height, width)?;
        let down2 = ConvSpec::conv(head_width, head_width, 3, 2, 1)?;
        let s2 = down2.output_size(s1.0, s1.1)?;
        let half = (head_width / 2).max(1);
        let head = vec![
            LayerSpec::new(down1, Activation::Elu),
            LayerSpec::new(down2, Activation::Elu),
            LayerSpec::new(
                ConvSpec::conv(head_width, head_width, 3, 1, 1)?,
                Activation::Elu,
            ),
            LayerSpec::new(upsample_spec(head_width, half, s2, s1)?, Activation::Elu),
            LayerSpec::new(
                upsample_spec(half, 1, s1, (height, width))?,
                Activation::Linear,
            ),
        ];
        let cfg = Self {
            input_height: height,
            input_width: width,
            tower,
            max_disparity,
            head,
            normalize_features: true,
            correlation_gain: tower_widths[tower_widths.len() - 1] as f64,
            elu_alpha: 1.0,
            output_alpha: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.input_height, self.input_width);
        if self.max_disparity >= w {
            return Err(Error::Config(format!(
                "max_disparity {} must be below the input width {w}",
                self.max_disparity
            )));
        }
        if !(self.elu_alpha > 0.0 && self.output_alpha > 0.0) {
            return Err(Error::Config("ELU alphas must be positive".into()));
        }
        if !(self.correlation_gain > 0.0 && self.correlation_gain.is_finite()) {
            return Err(Error::Config("correlation_gain must be positive".into()));
        }
        let tower = trace_sizes("tower", &self.tower, 3, (h, w))?;
        if let Some(&(_, th, tw)) = tower.last() {
            if (th, tw) != (h, w) {
                return Err(Error::Config(format!(
                    "tower must keep the input size {h}x{w}, produces {th}x{tw}"
                )));
            }
        }
        let head = trace_sizes("head", &self.head, self.max_disparity + 1, (h, w))?;
        if head.last().copied() != Some((1, h, w)) {
            return Err(Error::Config(format!(
                "head must end at [1, {h}, {w}], ends at {:?}",
                head.last()
            )));
        }
        Ok(())
    }
}

/// Stereo matching network with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchNet<T> {
    cfg: MatchNetConfig,
    params: ParamSet<T>,
    tower: Stack,
    head: Stack,
}

impl<T: Scalar> MatchNet<T> {
    pub fn new(cfg: MatchNetConfig, seed: u64) -> Result<Self> {
        Self::with_rng(cfg, &mut seeded_rng(seed))
    }

    pub fn with_rng<R: Rng>(cfg: MatchNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::default();
        let tower = Stack::build("tower.", &cfg.tower, &mut params, rng)?;
        let head = Stack::build("head.", &cfg.head, &mut params, rng)?;
        Ok(Self {
            cfg,
            params,
            tower,
            head,
        })
    }

    pub fn config(&self) -> &MatchNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Records a matching pass and returns the `[1,H,W]` disparity node.
    pub fn forward(&self, tape: &mut Tape<T>, left: Var, right: Var) -> Result<Var> {
        let want = [3, self.cfg.input_height, self.cfg.input_width];
        for (name, v) in [("left", left), ("right", right)] {
            if tape.shape(v) != want {
                return Err(Error::shape(format!(
                    "matcher {name} input must be {want:?}, got {:?}",
                    tape.shape(v)
                )));
            }
        }
        let elu_alpha = T::of(self.cfg.elu_alpha);
        let out_alpha = T::of(self.cfg.output_alpha);
        let tower = self.tower.bind(tape, &self.params);
        let head = self.head.bind(tape, &self.params);
        let mut fl = tower.forward(tape, left, elu_alpha)?;
        let mut fr = tower.forward(tape, right, elu_alpha)?;
        if self.cfg.normalize_features {
            let eps = T::of(FEATURE_EPS);
            fl = tape.channel_normalize(fl, eps)?;
            fr = tape.channel_normalize(fr, eps)?;
        }
        let mut volume = tape.correlate1d(fl, fr, self.cfg.max_disparity)?;
        if self.cfg.correlation_gain != 1.0 {
            volume = tape.scale(volume, T::of(self.cfg.correlation_gain))?;
        }
        let z = head.forward(tape, volume, elu_alpha)?;
        let pos = tape.elu(z, out_alpha)?;
        tape.add_scalar(pos, out_alpha)
    }

    /// Disparity of `left` against `right`, both `[3,H,W]` at the configured
    /// size.
    pub fn match_stereo(&self, left: &Tensor<T>, right: &Tensor<T>) -> Result<DisparityMap> {
        if left.shape() != right.shape() {
            return Err(Error::shape(format!(
                "stereo views differ in shape: {:?} vs {:?}",
                left.shape(),
                right.shape()
            )));
        }
        let mut tape = Tape::new();
        let l = tape.constant(left);
        let r = tape.constant(right);
        let d = self.forward(&mut tape, l, r)?;
        // ELU + alpha can round to a tiny negative in low precision.
        let data = tape
            .value(d)
            .iter()
            .map(|v| (v.as_f64() as f32).max(0.0))
            .collect();
        DisparityMap::from_vec(self.cfg.input_height, self.cfg.input_width, data)
    }
}

impl<T: Scalar> Trainable<T> for MatchNet<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn sample_loss(
        &self,
        tape: &mut Tape<T>,
        sample: &StereoSample<T>,
        kind: LossKind,
    ) -> Result<Var> {
        let Some(target) = &sample.disparity else {
            return Err(Error::invalid(
                "matcher training needs a target disparity per sample",
            ));
        };
        let l = tape.constant(&sample.left);
        let r = tape.constant(&sample.right);
        let t = tape.constant(target);
        let d = self.forward(tape, l, r)?;
        tape.loss(d, t, kind)
    }
}
