use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{seeded_rng, LossKind, OptimConfig, Optimizer, Tape, Tensor, Var};

/// A left view, its right view and optionally the left-view disparity.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample<T> {
    pub left: Tensor<T>,
    pub right: Tensor<T>,
    pub disparity: Option<Tensor<T>>,
}

impl<T: Scalar> StereoSample<T> {
    pub fn new(left: Tensor<T>, right: Tensor<T>) -> Result<Self> {
        let (c, _, _) = left.dims3()?;
        if c != 3 || left.shape() != right.shape() {
            return Err(Error::shape(format!(
                "stereo views must both be [3,H,W], got {:?} and {:?}",
                left.shape(),
                right.shape()
            )));
        }
        Ok(Self {
            left,
            right,
            disparity: None,
        })
    }

    pub fn with_disparity(mut self, disparity: Tensor<T>) -> Result<Self> {
        let want = [1, self.left.shape()[1], self.left.shape()[2]];
        if disparity.shape() != want {
            return Err(Error::shape(format!(
                "disparity must be {want:?}, got {:?}",
                disparity.shape()
            )));
        }
        self.disparity = Some(disparity);
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> StereoSample<U> {
        StereoSample {
            left: self.left.cast(),
            right: self.right.cast(),
            disparity: self.disparity.as_ref().map(Tensor::cast),
        }
    }
}

/// Loss, epoch count and optimizer settings for one training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub loss_kind: LossKind,
    pub epochs: usize,
    pub optim: OptimConfig,
}

impl TrainPlan {
    /// L1 loss for 50 epochs.
    pub fn synthesis() -> Self {
        Self {
            loss_kind: LossKind::L1,
            epochs: 50,
            optim: OptimConfig::default(),
        }
    }

    /// L2 loss for 300 epochs.
    pub fn matcher() -> Self {
        Self {
            loss_kind: LossKind::L2,
            epochs: 300,
            optim: OptimConfig::default(),
        }
    }
}

/// A network that can score one sample on a tape.
pub trait Trainable<T: Scalar>: Sync {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    /// Records the forward pass for `sample` and returns the scalar loss node.
    fn sample_loss(
        &self,
        tape: &mut Tape<T>,
        sample: &StereoSample<T>,
        kind: LossKind,
    ) -> Result<Var>;
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    pub fn first(&self) -> Option<f64> {
        self.epoch_losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Mini-batch training. Samples are visited in a seeded shuffled order;
/// within a batch they are evaluated in parallel and their gradients averaged
/// in sample order, so the run is reproducible for a given seed.
pub fn train_network<T, N>(
    net: &mut N,
    data: &[StereoSample<T>],
    plan: &TrainPlan,
    seed: u64,
) -> Result<TrainReport>
where
    T: Scalar,
    N: Trainable<T>,
{
    if data.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    let mut opt = Optimizer::new(plan.optim)?;
    let mut rng = seeded_rng(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    net.params_mut().zero_grads();

    for epoch in 0..plan.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(plan.optim.batch_size) {
            let n_params = net.params().len();
            let model = &*net;
            let results: Vec<Result<(f64, Vec<Option<Vec<T>>>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new();
                    let loss = model.sample_loss(&mut tape, &data[i], plan.loss_kind)?;
                    let value = tape.value(loss)[0].as_f64();
                    if !value.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "loss {value} at epoch {} on sample {i}",
                            epoch + 1
                        )));
                    }
                    let grads = tape.backward(loss)?;
                    Ok((value, (0..n_params).map(|k| grads.param(k)).collect()))
                })
                .collect();

            let scale = T::one() / T::of(batch.len() as f64);
            let params = net.params_mut().tensors_mut();
            for result in results {
                let (value, grads) = result?;
                total += value;
                for (p, g) in params.iter_mut().zip(grads) {
                    let (Some(g), Some(buf)) = (g, p.grad_mut()) else {
                        continue;
                    };
                    buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += scale * b);
                }
            }
            opt.step(params)?;
            report.steps += 1;
        }
        let mean = total / data.len() as f64;
        log::debug!("epoch {}: loss {mean:.6}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    Ok(report)
}
