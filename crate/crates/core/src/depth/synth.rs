use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{trace_sizes, upsample_spec, Activation, LayerSpec, ParamSet, Stack};
use super::train::{StereoSample, Trainable};
use super::{SELECTION_CHANNELS, SYNTH_INPUT_SIZE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ops, seeded_rng, ConvSpec, LossKind, Tape, Tensor, Var};

/// `[C,H,W] -> [n,C,H,W]`; slice `k` at `(y, x)` is the input at
/// `(y, min(x + k, W - 1))`.
pub fn shift_stack<T: Scalar>(image: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image.dims3()?;
    if n == 0 || n > w {
        return Err(Error::invalid(format!(
            "shift_stack needs 1 <= n <= width ({w}), got {n}"
        )));
    }
    Tensor::from_vec(&[n, c, h, w], ops::shift_stack(image.data(), c, h, w, n))
}

/// Softmax over the selection channels, then the per-pixel weighted sum of the
/// stack slices.
pub fn disparity_select<T: Scalar>(selection: &Tensor<T>, stack: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w) = selection.dims3()?;
    let c = match stack.shape() {
        &[sn, c, sh, sw] if (sn, sh, sw) == (n, h, w) => c,
        s => {
            return Err(Error::shape(format!(
                "selection [{n},{h},{w}] does not match stack {s:?}"
            )))
        }
    };
    let weights = ops::channel_softmax(selection.data(), n);
    Tensor::from_vec(&[c, h, w], ops::blend(&weights, stack.data(), n, c))
}

const DEFAULT_SELECTION_GAIN: f64 = 20.0;

/// Layer stacks of the right-view synthesis network.
///
/// The encoder runs on the left image, the decoder ends in one logit per
/// shifted view, and the refinement layers run on the blended image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthNetConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub selection_channels: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub refine: Vec<LayerSpec>,
    /// Add each encoder activation to the decoder output of the same size.
    pub skip_connections: bool,
    /// Refinement predicts a correction added to the blended view.
    pub residual_refine: bool,
    /// Multiplier on the selection logits before the softmax.
    pub selection_gain: f64,
    pub elu_alpha: f64,
}

impl Default for SynthNetConfig {
    fn default() -> Self {
        Self::encoder_decoder(
            SYNTH_INPUT_SIZE,
            SYNTH_INPUT_SIZE,
            &[3, 16, 32, 64, 128],
            SELECTION_CHANNELS,
            16,
        )
        .expect("default synthesis architecture is valid")
    }
}

impl SynthNetConfig {
    /// Default architecture at another input size.
    pub fn for_size(height: usize, width: usize) -> Result<Self> {
        Self::encoder_decoder(height, width, &[3, 16, 32, 64, 128], SELECTION_CHANNELS, 16)
    }

    /// Stride-2 convolutions through `widths`, mirrored stride-2
    /// deconvolutions back to `selection_channels`, then a hidden refinement
    /// layer of `refine_hidden` channels and a linear RGB output. Skip
    /// connections and the residual refinement are on.
    pub fn encoder_decoder(
        height: usize,
        width: usize,
        widths: &[usize],
        selection_channels: usize,
        refine_hidden: usize,
    ) -> Result<Self> {
        if widths.len() < 2 || widths[0] != 3 {
            return Err(Error::Config(
                "encoder widths must start at 3 and have a layer".into(),
            ));
        }
        let mut sizes = vec![(height, width)];
        let mut encoder = Vec::new();
        for pair in widths.windows(2) {
            let conv = ConvSpec::conv(pair[0], pair[1], 3, 2, 1)?;
            let (h, w) = *sizes.last().expect("non-empty");
            sizes.push(conv.output_size(h, w)?);
            encoder.push(LayerSpec::new(conv, Activation::Elu));
        }
        let mut decoder = Vec::new();
        let depth = widths.len() - 1;
        for level in (0..depth).rev() {
            let last = level == 0;
            let out = if last {
                selection_channels
            } else {
                widths[level]
            };
            let spec = upsample_spec(widths[level + 1], out, sizes[level + 1], sizes[level])?;
            let act = if last {
                Activation::Linear
            } else {
                Activation::Elu
            };
            decoder.push(LayerSpec::new(spec, act));
        }
        let refine = vec![
            LayerSpec::new(ConvSpec::conv(3, refine_hidden, 3, 1, 1)?, Activation::Elu),
            LayerSpec::new(
                ConvSpec::conv(refine_hidden, 3, 3, 1, 1)?,
                Activation::Linear,
            ),
        ];
        let cfg = Self {
            input_height: height,
            input_width: width,
            selection_channels,
            encoder,
            decoder,
            refine,
            skip_connections: true,
            residual_refine: true,
            selection_gain: DEFAULT_SELECTION_GAIN,
            elu_alpha: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.input_height, self.input_width);
        if self.selection_channels == 0 || self.selection_channels > w {
            return Err(Error::Config(format!(
                "selection_channels must be in 1..={w}, got {}",
                self.selection_channels
            )));
        }
        if !(self.elu_alpha > 0.0) {
            return Err(Error::Config("elu_alpha must be positive".into()));
        }
        if !(self.selection_gain > 0.0 && self.selection_gain.is_finite()) {
            return Err(Error::Config("selection_gain must be positive".into()));
        }
        let enc = trace_sizes("encoder", &self.encoder, 3, (h, w))?;
        let (c, eh, ew) = enc.last().copied().unwrap_or((3, h, w));
        let dec = trace_sizes("decoder", &self.decoder, c, (eh, ew))?;
        if dec.last().copied() != Some((self.selection_channels, h, w)) {
            return Err(Error::Config(format!(
                "decoder must end at [{}, {h}, {w}], ends at {:?}",
                self.selection_channels,
                dec.last()
            )));
        }
        if self.skip_connections {
            for (i, out) in dec.iter().enumerate().take(dec.len() - 1) {
                let j = enc.len().checked_sub(i + 2);
                if j.map(|j| enc[j]) != Some(*out) {
                    return Err(Error::Config(format!(
                        "decoder[{i}] output {out:?} has no matching encoder activation for a skip connection"
                    )));
                }
            }
        }
        let refine = trace_sizes("refine", &self.refine, 3, (h, w))?;
        if refine.last().copied().unwrap_or((3, h, w)) != (3, h, w) {
            return Err(Error::Config(format!(
                "refinement must end at [3, {h}, {w}], ends at {:?}",
                refine.last()
            )));
        }
        Ok(())
    }
}

/// Tape handles for the intermediate products of one synthesis pass.
#[derive(Clone, Copy, Debug)]
pub struct SynthOutputs {
    /// `[n,H,W]` selection logits.
    pub selection: Var,
    /// Blend of the shifted views, `[3,H,W]`.
    pub blended: Var,
    /// Refined right view, `[3,H,W]`.
    pub right: Var,
}

/// Right-view synthesis network with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthNet<T> {
    cfg: SynthNetConfig,
    params: ParamSet<T>,
    encoder: Stack,
    decoder: Stack,
    refine: Stack,
}

impl<T: Scalar> SynthNet<T> {
    pub fn new(cfg: SynthNetConfig, seed: u64) -> Result<Self> {
        Self::with_rng(cfg, &mut seeded_rng(seed))
    }

    pub fn with_rng<R: Rng>(cfg: SynthNetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::default();
        let encoder = Stack::build("encoder.", &cfg.encoder, &mut params, rng)?;
        let decoder = Stack::build("decoder.", &cfg.decoder, &mut params, rng)?;
        let refine = Stack::build("refine.", &cfg.refine, &mut params, rng)?;
        Ok(Self {
            cfg,
            params,
            encoder,
            decoder,
            refine,
        })
    }

    pub fn config(&self) -> &SynthNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = [3, self.cfg.input_height, self.cfg.input_width];
        if shape != want {
            return Err(Error::shape(format!(
                "synthesis input must be {want:?}, got {shape:?}"
            )));
        }
        Ok(())
    }

    /// Records a synthesis pass from `left` on the tape.
    pub fn forward(&self, tape: &mut Tape<T>, left: Var) -> Result<SynthOutputs> {
        self.check_input(tape.shape(left))?;
        let alpha = T::of(self.cfg.elu_alpha);
        let encoder = self.encoder.bind(tape, &self.params);
        let decoder = self.decoder.bind(tape, &self.params);
        let refine = self.refine.bind(tape, &self.params);

        let enc = encoder.forward_all(tape, left, alpha)?;
        let bottom = *enc.last().unwrap_or(&left);
        let skips = self.cfg.skip_connections;
        let selection = decoder.forward_with(tape, bottom, alpha, |tape, i, y| {
            if skips && i + 2 <= enc.len() && i + 1 < self.cfg.decoder.len() {
                tape.add(y, enc[enc.len() - i - 2])
            } else {
                Ok(y)
            }
        })?;
        let gained = if self.cfg.selection_gain == 1.0 {
            selection
        } else {
            tape.scale(selection, T::of(self.cfg.selection_gain))?
        };
        let weights = tape.channel_softmax(gained)?;
        let stack = tape.shift_stack(left, self.cfg.selection_channels)?;
        let blended = tape.blend(weights, stack)?;
        let mut right = refine.forward(tape, blended, alpha)?;
        if self.cfg.residual_refine {
            right = tape.add(right, blended)?;
        }
        Ok(SynthOutputs {
            selection,
            blended,
            right,
        })
    }

    /// Synthesized right view for a `[3,H,W]` left image at the configured
    /// input size.
    pub fn synthesize_right(&self, left: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(left.shape())?;
        let mut tape = Tape::new();
        let l = tape.constant(left);
        let out = self.forward(&mut tape, l)?;
        Ok(tape.tensor(out.right))
    }
}

impl<T: Scalar> Trainable<T> for SynthNet<T> {
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
        let left = tape.constant(&sample.left);
        let target = tape.constant(&sample.right);
        let out = self.forward(tape, left)?;
        tape.loss(out.right, target, kind)
    }
}
