use log::warn;

use super::conv::{self, ConvSpec, Geometry};
use super::ops::{self, LossKind};
use super::{check_finite, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf {
        param: Option<usize>,
    },
    Conv {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    Elu {
        x: Var,
        alpha: T,
    },
    Sigmoid {
        x: Var,
    },
    AddScalar {
        x: Var,
    },
    Scale {
        x: Var,
        c: T,
    },
    Add {
        a: Var,
        b: Var,
    },
    ChannelSoftmax {
        x: Var,
    },
    ChannelNormalize {
        x: Var,
        norms: Vec<T>,
    },
    Blend {
        weights: Var,
        stack: Var,
    },
    ShiftStack {
        image: Var,
        n: usize,
    },
    Correlate {
        left: Var,
        right: Var,
        max_disp: usize,
    },
    Loss {
        pred: Var,
        target: Var,
        kind: LossKind,
    },
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records one forward pass. Every operation appends a node; [`Tape::backward`]
/// walks the nodes in reverse.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for the parameter registered under `key`, summed over every
    /// leaf that used it. `None` when the key never appeared on the tape.
    pub fn param(&self, key: usize) -> Option<Vec<T>> {
        let mut out: Option<Vec<T>> = None;
        for &(k, node) in &self.params {
            if k != key {
                continue;
            }
            let Some(g) = self.grads[node].as_deref() else {
                continue;
            };
            match &mut out {
                None => out = Some(g.to_vec()),
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            }
        }
        out
    }

    pub fn has_param(&self, key: usize) -> bool {
        self.params.iter().any(|&(k, _)| k == key)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        value: Vec<T>,
        op: Op<T>,
        needs: bool,
    ) -> Result<Var> {
        check_finite(&value, name)?;
        Ok(self.push(shape, value, op, needs))
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    /// Input that takes no gradient.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf { param: None },
            false,
        )
    }

    /// Input whose gradient is tracked but which is not an optimizer parameter.
    pub fn variable(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf { param: None },
            true,
        )
    }

    /// Parameter leaf; `key` is the parameter's index in the list later handed
    /// to the optimizer.
    pub fn param(&mut self, key: usize, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf { param: Some(key) },
            true,
        )
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::from_vec(&n.shape, n.value.clone()).expect("tape values are validated on insertion")
    }

    fn dims3(&self, v: Var, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape(v) {
            &[c, h, w] => Ok((c, h, w)),
            s => Err(Error::shape(format!("{what} must be [C,H,W], got {s:?}"))),
        }
    }

    /// Convolution or transposed convolution of a `[C,H,W]` input.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: &ConvSpec,
    ) -> Result<Var> {
        let spec = spec.validated()?;
        let (c, h, w) = self.dims3(input, "conv2d input")?;
        if c != spec.in_channels {
            return Err(Error::shape(format!(
                "conv2d input has {c} channels, spec expects {}",
                spec.in_channels
            )));
        }
        if self.shape(weight) != spec.weight_shape() {
            return Err(Error::shape(format!(
                "conv2d weights shaped {:?}, spec expects {:?}",
                self.shape(weight),
                spec.weight_shape()
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [spec.out_channels] {
                return Err(Error::shape(format!(
                    "conv2d bias shaped {:?}, expected [{}]",
                    self.shape(b),
                    spec.out_channels
                )));
            }
        }
        let (oh, ow) = spec.output_size(h, w)?;
        let x = self.value(input);
        let wt = self.value(weight);
        let mut y = if spec.transposed {
            conv::backward_input(x, wt, &transposed_geometry(&spec, h, w, oh, ow))
        } else {
            conv::forward(x, wt, &regular_geometry(&spec, h, w, oh, ow))
        };
        if let Some(b) = bias {
            conv::add_bias(&mut y, self.value(b));
        }
        let needs = self.node(input).needs_grad
            || self.node(weight).needs_grad
            || bias.is_some_and(|b| self.node(b).needs_grad);
        self.push_checked(
            "conv2d",
            vec![spec.out_channels, oh, ow],
            y,
            Op::Conv {
                input,
                weight,
                bias,
                spec,
            },
            needs,
        )
    }

    pub fn elu(&mut self, x: Var, alpha: T) -> Result<Var> {
        if !(alpha > T::zero()) {
            return Err(Error::invalid("elu alpha must be positive"));
        }
        let y = self.value(x).iter().map(|&z| ops::elu(z, alpha)).collect();
        let n = self.node(x);
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        self.push_checked("elu", shape, y, Op::Elu { x, alpha }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).iter().map(|&z| ops::sigmoid(z)).collect();
        let n = self.node(x);
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        self.push_checked("sigmoid", shape, y, Op::Sigmoid { x }, needs)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let y = self.value(x).iter().map(|&z| z + c).collect();
        let n = self.node(x);
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        self.push_checked("add_scalar", shape, y, Op::AddScalar { x }, needs)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let y = self.value(x).iter().map(|&z| z * c).collect();
        let n = self.node(x);
        let (shape, needs) = (n.shape.clone(), n.needs_grad);
        self.push_checked("scale", shape, y, Op::Scale { x, c }, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let y = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&p, &q)| p + q)
            .collect();
        let needs = self.node(a).needs_grad || self.node(b).needs_grad;
        let shape = self.shape(a).to_vec();
        self.push_checked("add", shape, y, Op::Add { a, b }, needs)
    }

    /// Softmax across the leading axis, independently at every other index.
    pub fn channel_softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.shape(x)[0];
        let y = ops::channel_softmax(self.value(x), n);
        let node = self.node(x);
        let (shape, needs) = (node.shape.clone(), node.needs_grad);
        self.push_checked("channel_softmax", shape, y, Op::ChannelSoftmax { x }, needs)
    }

    /// Scales each position's vector across the leading axis to unit L2
    /// norm; `eps` under the square root keeps all-zero vectors finite.
    pub fn channel_normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(Error::invalid(format!(
                "channel_normalize eps must be positive, got {eps}"
            )));
        }
        let n = self.shape(x)[0];
        let (y, norms) = ops::channel_normalize(self.value(x), n, eps);
        let node = self.node(x);
        let (shape, needs) = (node.shape.clone(), node.needs_grad);
        self.push_checked(
            "channel_normalize",
            shape,
            y,
            Op::ChannelNormalize { x, norms },
            needs,
        )
    }

    /// `[n,H,W]` weights times `[n,C,H,W]` stack, summed over `n`.
    pub fn blend(&mut self, weights: Var, stack: Var) -> Result<Var> {
        let (n, h, w) = self.dims3(weights, "blend weights")?;
        let c = match self.shape(stack) {
            &[sn, c, sh, sw] if sn == n && sh == h && sw == w => c,
            s => {
                return Err(Error::shape(format!(
                    "blend stack shaped {s:?} does not match weights [{n},{h},{w}]"
                )))
            }
        };
        let y = ops::blend(self.value(weights), self.value(stack), n, c);
        let needs = self.node(weights).needs_grad || self.node(stack).needs_grad;
        self.push_checked(
            "blend",
            vec![c, h, w],
            y,
            Op::Blend { weights, stack },
            needs,
        )
    }

    /// `[C,H,W] -> [n,C,H,W]` of horizontally shifted copies.
    pub fn shift_stack(&mut self, image: Var, n: usize) -> Result<Var> {
        let (c, h, w) = self.dims3(image, "shift_stack input")?;
        if n == 0 || n > w {
            return Err(Error::invalid(format!(
                "shift_stack needs 1 <= n <= width ({w}), got {n}"
            )));
        }
        let y = ops::shift_stack(self.value(image), c, h, w, n);
        let needs = self.node(image).needs_grad;
        self.push_checked(
            "shift_stack",
            vec![n, c, h, w],
            y,
            Op::ShiftStack { image, n },
            needs,
        )
    }

    /// 1-D horizontal correlation volume with `max_disp + 1` channels.
    pub fn correlate1d(&mut self, left: Var, right: Var, max_disp: usize) -> Result<Var> {
        let (c, h, w) = self.dims3(left, "correlate1d left")?;
        if self.shape(right) != self.shape(left) {
            return Err(Error::shape(format!(
                "correlate1d feature maps differ: {:?} vs {:?}",
                self.shape(left),
                self.shape(right)
            )));
        }
        if max_disp >= w {
            return Err(Error::invalid(format!(
                "correlate1d max_disp {max_disp} must be below width {w}"
            )));
        }
        let y = ops::correlate1d(self.value(left), self.value(right), c, h, w, max_disp);
        let needs = self.node(left).needs_grad || self.node(right).needs_grad;
        self.push_checked(
            "correlate1d",
            vec![max_disp + 1, h, w],
            y,
            Op::Correlate {
                left,
                right,
                max_disp,
            },
            needs,
        )
    }

    /// Mean absolute or mean squared error as a `[1]` tensor.
    pub fn loss(&mut self, pred: Var, target: Var, kind: LossKind) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(format!(
                "loss between {:?} and {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let v = ops::loss(self.value(pred), self.value(target), kind);
        let needs = self.node(pred).needs_grad;
        self.push_checked(
            "loss",
            vec![1],
            vec![v],
            Op::Loss { pred, target, kind },
            needs,
        )
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.shape(root).iter().product::<usize>() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {i}")));
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(k) } => Some((k, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv {
                input,
                weight,
                bias,
                spec,
            } => {
                let (_, h, w) = self
                    .dims3(*input, "conv2d input")
                    .expect("checked in forward");
                let (oh, ow) = (node.shape[1], node.shape[2]);
                let x = self.value(*input);
                let wt = self.value(*weight);
                if spec.transposed {
                    let geo = transposed_geometry(spec, h, w, oh, ow);
                    if wants(*input) {
                        accumulate(grads, *input, conv::forward(g, wt, &geo));
                    }
                    if wants(*weight) {
                        accumulate(grads, *weight, conv::backward_weight(g, x, &geo));
                    }
                } else {
                    let geo = regular_geometry(spec, h, w, oh, ow);
                    if wants(*input) {
                        accumulate(grads, *input, conv::backward_input(g, wt, &geo));
                    }
                    if wants(*weight) {
                        accumulate(grads, *weight, conv::backward_weight(x, g, &geo));
                    }
                }
                if let Some(b) = bias {
                    if wants(*b) {
                        accumulate(grads, *b, conv::bias_grad(g, spec.out_channels));
                    }
                }
            }
            Op::Elu { x, alpha } => {
                let gx = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&z, &gv)| gv * ops::elu_grad(z, *alpha))
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::Sigmoid { x } => {
                let gx = node
                    .value
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (T::one() - s))
                    .collect();
                accumulate(grads, *x, gx);
            }
            Op::AddScalar { x } => accumulate(grads, *x, g.to_vec()),
            Op::Scale { x, c } => accumulate(grads, *x, g.iter().map(|&v| v * *c).collect()),
            Op::Add { a, b } => {
                if wants(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if wants(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::ChannelSoftmax { x } => {
                let gx = ops::channel_softmax_grad(&node.value, g, node.shape[0]);
                accumulate(grads, *x, gx);
            }
            Op::ChannelNormalize { x, norms } => {
                let gx = ops::channel_normalize_grad(&node.value, norms, g, node.shape[0]);
                accumulate(grads, *x, gx);
            }
            Op::Blend { weights, stack } => {
                let (n, c) = (self.shape(*weights)[0], node.shape[0]);
                let (gw, gs) = ops::blend_grads(self.value(*weights), self.value(*stack), g, n, c);
                if wants(*weights) {
                    accumulate(grads, *weights, gw);
                }
                if wants(*stack) {
                    accumulate(grads, *stack, gs);
                }
            }
            Op::ShiftStack { image, n } => {
                let (c, h, w) = (node.shape[1], node.shape[2], node.shape[3]);
                accumulate(grads, *image, ops::shift_stack_grad(g, c, h, w, *n));
            }
            Op::Correlate {
                left,
                right,
                max_disp,
            } => {
                let s = self.shape(*left);
                let (c, h, w) = (s[0], s[1], s[2]);
                let (gl, gr) = ops::correlate1d_grads(
                    self.value(*left),
                    self.value(*right),
                    g,
                    c,
                    h,
                    w,
                    *max_disp,
                );
                if wants(*left) {
                    accumulate(grads, *left, gl);
                }
                if wants(*right) {
                    accumulate(grads, *right, gr);
                }
            }
            Op::Loss { pred, target, kind } => {
                let gp = ops::loss_grad(self.value(*pred), self.value(*target), *kind, g[0]);
                accumulate(grads, *pred, gp);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn regular_geometry(spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize) -> Geometry {
    Geometry {
        ci: spec.in_channels,
        h,
        w,
        co: spec.out_channels,
        oh,
        ow,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
    }
}

/// A transposed convolution `[in, h, w] -> [out, oh, ow]` is the input-adjoint
/// of a regular convolution `[out, oh, ow] -> [in, h, w]`.
fn transposed_geometry(spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize) -> Geometry {
    Geometry {
        ci: spec.out_channels,
        h: oh,
        w: ow,
        co: spec.in_channels,
        oh: h,
        ow: w,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
    }
}

/// Parameters that never appeared on the tape are skipped with a warning.
pub(crate) fn warn_missing(key: usize) {
    warn!("parameter {key} is not part of the graph; skipping update");
}
