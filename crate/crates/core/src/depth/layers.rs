use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{init_bias, init_weights, ConvSpec, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Linear,
}

/// One convolution or deconvolution followed by an activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub conv: ConvSpec,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(conv: ConvSpec, activation: Activation) -> Self {
        Self { conv, activation }
    }
}

/// Named parameter tensors of a network, in registration order. The index of
/// a tensor is its key on the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t.with_grad());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor from `(name, tensor)` pairs. Names must match this
    /// set exactly (any order) and shapes must agree.
    pub fn load_named(&mut self, entries: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut slots: Vec<Option<Tensor<T>>> = vec![None; self.len()];
        for (name, t) in entries {
            let Some(i) = self.names.iter().position(|n| *n == name) else {
                return Err(Error::Integrity(format!("unknown parameter {name:?}")));
            };
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::Integrity(format!(
                    "parameter {name:?} has shape {:?}, network expects {:?}",
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
            if slots[i].replace(t).is_some() {
                return Err(Error::Integrity(format!("parameter {name:?} given twice")));
            }
        }
        if let Some(i) = slots.iter().position(Option::is_none) {
            return Err(Error::Integrity(format!(
                "missing parameter {:?}",
                self.names[i]
            )));
        }
        for (dst, src) in self.tensors.iter_mut().zip(slots) {
            *dst = src.expect("checked above").with_grad();
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.cast::<U>().with_grad())
                .collect(),
        }
    }
}

/// A stack of layers whose weights live in a shared [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Stack {
    layers: Vec<(LayerSpec, usize, usize)>,
}

impl Stack {
    pub fn build<T: Scalar, R: Rng>(
        prefix: &str,
        specs: &[LayerSpec],
        params: &mut ParamSet<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let conv = spec.conv.validated()?;
            let w = params.push(format!("{prefix}{i}.weight"), init_weights(&conv, rng));
            let b = params.push(format!("{prefix}{i}.bias"), init_bias(&conv));
            layers.push((*spec, w, b));
        }
        Ok(Self { layers })
    }

    /// Registers this stack's parameters on the tape.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamSet<T>) -> BoundStack {
        BoundStack {
            layers: self
                .layers
                .iter()
                .map(|&(spec, w, b)| {
                    (
                        spec,
                        tape.param(w, &params.tensors()[w]),
                        tape.param(b, &params.tensors()[b]),
                    )
                })
                .collect(),
        }
    }
}

/// A [`Stack`] whose parameters are on a tape. Binding once and applying many
/// times shares weights between the applications.
pub(crate) struct BoundStack {
    layers: Vec<(LayerSpec, Var, Var)>,
}

impl BoundStack {
    /// Runs every layer, returning the output of each.
    pub fn forward_all<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        mut x: Var,
        alpha: T,
    ) -> Result<Vec<Var>> {
        let mut outs = Vec::with_capacity(self.layers.len());
        for (spec, w, b) in &self.layers {
            x = tape.conv2d(x, *w, Some(*b), &spec.conv)?;
            if spec.activation == Activation::Elu {
                x = tape.elu(x, alpha)?;
            }
            outs.push(x);
        }
        Ok(outs)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, alpha: T) -> Result<Var> {
        self.forward_with(tape, x, alpha, |_, _, y| Ok(y))
    }

    /// Like [`BoundStack::forward`], passing each layer's activated output
    /// through `hook(tape, layer_index, output)`.
    pub fn forward_with<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        mut x: Var,
        alpha: T,
        mut hook: impl FnMut(&mut Tape<T>, usize, Var) -> Result<Var>,
    ) -> Result<Var> {
        for (i, (spec, w, b)) in self.layers.iter().enumerate() {
            x = tape.conv2d(x, *w, Some(*b), &spec.conv)?;
            if spec.activation == Activation::Elu {
                x = tape.elu(x, alpha)?;
            }
            x = hook(tape, i, x)?;
        }
        Ok(x)
    }
}

/// Checks that a chain of layers is channel-consistent and returns the spatial
/// size after each layer.
pub(crate) fn trace_sizes(
    name: &str,
    specs: &[LayerSpec],
    in_channels: usize,
    (mut h, mut w): (usize, usize),
) -> Result<Vec<(usize, usize, usize)>> {
    let mut c = in_channels;
    let mut sizes = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let conv = spec
            .conv
            .validated()
            .map_err(|e| Error::Config(format!("{name}[{i}]: {e}")))?;
        if conv.in_channels != c {
            return Err(Error::Config(format!(
                "{name}[{i}] expects {} input channels but receives {c}",
                conv.in_channels
            )));
        }
        (h, w) = conv
            .output_size(h, w)
            .map_err(|e| Error::Config(format!("{name}[{i}]: {e}")))?;
        c = conv.out_channels;
        sizes.push((c, h, w));
    }
    Ok(sizes)
}

/// Kernel size that makes a stride-2, padding-1 transposed convolution map
/// `small` back onto `large` (where `small = ceil(large / 2)`).
pub(crate) fn upsample_kernel(small: usize, large: usize) -> Result<usize> {
    if large == 2 * small {
        Ok(4)
    } else if large + 1 == 2 * small {
        Ok(3)
    } else {
        Err(Error::Config(format!(
            "cannot upsample {small} to {large} with a stride-2 deconvolution"
        )))
    }
}

/// Stride-2 deconvolution taking `from` spatial size to `to`.
pub(crate) fn upsample_spec(
    in_channels: usize,
    out_channels: usize,
    from: (usize, usize),
    to: (usize, usize),
) -> Result<ConvSpec> {
    Ok(ConvSpec {
        in_channels,
        out_channels,
        kernel_h: upsample_kernel(from.0, to.0)?,
        kernel_w: upsample_kernel(from.1, to.1)?,
        stride: 2,
        padding: 1,
        transposed: true,
    })
}
