//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use vision_core::tensor::{Tape, Tensor, Var};

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_tensor32<R: Rng>(shape: &[usize], rng: &mut R, lo: f32, hi: f32) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Six-loop direct convolution (cross-correlation), weights `[out, in, kh, kw]`.
pub fn reference_conv(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    wt: &[f64],
    bias: &[f64],
    (o, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut y = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += wt[((oc * c + ic) * kh + ky) * kw + kx]
                                * x[(ic * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                y[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (y, oh, ow)
}

/// Three-loop correlation volume reference.
pub fn reference_correlate(
    l: &[f64],
    r: &[f64],
    (c, h, w): (usize, usize, usize),
    max_disp: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; (max_disp + 1) * h * w];
    for d in 0..=max_disp {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ch in 0..c {
                    if x >= d {
                        acc += l[(ch * h + y) * w + x] * r[(ch * h + y) * w + x - d];
                    }
                }
                out[(d * h + y) * w + x] = acc / c as f64;
            }
        }
    }
    out
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Central finite differences of a scalar function built on a fresh tape.
///
/// `build` records a forward pass from the given inputs (each registered with
/// `Tape::variable`) and returns the scalar output. The analytic gradients come
/// from one backward pass; each numeric partial perturbs one input entry by
/// `±h`. Errors are `|a - n| / max(1, |a|)`.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    h: f64,
    max_entries: usize,
    build: F,
) -> GradReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.variable(t)).collect();
        let out = build(&mut tape, &vars);
        tape.value(out)[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t)).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for (k, input) in inputs.iter().enumerate() {
        let zeros = vec![0.0; input.len()];
        let analytic = grads.wrt(vars[k]).unwrap_or(&zeros).to_vec();
        let stride = (input.len() / max_entries).max(1);
        for i in (0..input.len()).step_by(stride) {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    GradReport {
        max_rel_error: max_rel,
        checked,
    }
}

/// Reduces any tensor to a scalar with fixed random weights so every output
/// element receives a distinct upstream gradient.
pub fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    use rand::SeedableRng;
    let shape = tape.shape(v).to_vec();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let target = random_tensor(&shape, &mut rng, -1.0, 1.0);
    let t = tape.constant(&target);
    tape.loss(v, t, vision_core::tensor::LossKind::L2).unwrap()
}

/// Central differences over the weights of a network, sampling at most
/// `per_param` entries of each parameter tensor.
pub fn check_param_gradients<N>(
    net: &mut N,
    sample: &vision_core::depth::StereoSample<f64>,
    kind: vision_core::tensor::LossKind,
    h: f64,
    per_param: usize,
) -> GradReport
where
    N: vision_core::depth::Trainable<f64>,
{
    let loss_of = |net: &N| -> f64 {
        let mut tape = Tape::new();
        let l = net.sample_loss(&mut tape, sample, kind).unwrap();
        tape.value(l)[0]
    };
    let mut tape = Tape::new();
    let l = net.sample_loss(&mut tape, sample, kind).unwrap();
    let grads = tape.backward(l).unwrap();

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for k in 0..net.params().len() {
        let len = net.params().tensors()[k].len();
        let analytic = grads.param(k).unwrap_or_else(|| vec![0.0; len]);
        let stride = (len / per_param).max(1);
        for i in (0..len).step_by(stride) {
            let orig = net.params().tensors()[k].data()[i];
            net.params_mut().tensors_mut()[k].data_mut()[i] = orig + h;
            let plus = loss_of(net);
            net.params_mut().tensors_mut()[k].data_mut()[i] = orig - h;
            let minus = loss_of(net);
            net.params_mut().tensors_mut()[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    GradReport {
        max_rel_error: max_rel,
        checked,
    }
}

/// Exhaustive suppression oracle. Among all subsets of the candidates scoring
/// at least `conf`, returns the one (there is exactly one) in which a
/// candidate is kept iff no kept, higher-ranked candidate of its class
/// overlaps it by more than `iou_thr`. Indices are in rank order.
pub fn nms_oracle(
    dets: &[vision_core::detector::Detection],
    iou_thr: f64,
    conf: f64,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].score >= conf).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(dets[a].bbox.x.total_cmp(&dets[b].bbox.x))
    });
    let n = order.len();
    assert!(n <= 16, "exhaustive oracle is exponential");
    let overlap = |i: usize, j: usize| {
        let (a, b) = (&dets[order[i]].bbox, &dets[order[j]].bbox);
        let ix = ((a.x + a.w / 2.0).min(b.x + b.w / 2.0) - (a.x - a.w / 2.0).max(b.x - b.w / 2.0))
            .max(0.0);
        let iy = ((a.y + a.h / 2.0).min(b.y + b.h / 2.0) - (a.y - a.h / 2.0).max(b.y - b.h / 2.0))
            .max(0.0);
        let inter = ix * iy;
        inter / (a.w * a.h + b.w * b.h - inter)
    };
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let consistent = (0..n).all(|j| {
            let blocked = (0..j).any(|i| {
                mask & (1 << i) != 0
                    && dets[order[i]].class_id == dets[order[j]].class_id
                    && overlap(i, j) > iou_thr
            });
            (mask & (1 << j) != 0) == !blocked
        });
        if consistent {
            found.push(mask);
        }
    }
    assert_eq!(found.len(), 1, "suppression fixed point must be unique");
    (0..n)
        .filter(|j| found[0] & (1 << j) != 0)
        .map(|j| order[j])
        .collect()
}
