use serde::{Deserialize, Serialize};

use super::tape::{warn_missing, Gradients};
use super::{check_finite, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Update rule applied by [`Optimizer`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// `p <- p - lr * (grad + weight_decay * p)`
    Sgd,
    /// Adam moments with the same decoupled weight-decay term.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Method {
    pub fn adam() -> Self {
        Method::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub method: Method,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0003,
            weight_decay: 1e-6,
            batch_size: 16,
            method: Method::Sgd,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Runs backward from `loss`, adds each parameter's gradient into its grad
/// buffer, applies one plain gradient-descent step with decoupled weight decay
/// and clears the grads.
///
/// `params[i]` is the tensor registered on the tape with key `i`. Parameters
/// the tape never saw are left untouched.
pub fn backward_and_step<T: Scalar>(
    tape: &Tape<T>,
    loss: Var,
    params: &mut [Tensor<T>],
    cfg: &OptimConfig,
) -> Result<()> {
    cfg.validate()?;
    let grads = tape.backward(loss)?;
    let lr = T::of(cfg.learning_rate);
    let wd = T::of(cfg.weight_decay);
    for (key, p) in params.iter_mut().enumerate() {
        if !grads.has_param(key) {
            warn_missing(key);
            continue;
        }
        add_param_grad(&grads, key, p, T::one());
        let Tensor { data, grad, .. } = p;
        let g = grad.as_mut().expect("allocated by add_param_grad");
        for (v, gv) in data.iter_mut().zip(g.iter_mut()) {
            *v -= lr * (*gv + wd * *v);
            *gv = T::zero();
        }
        check_finite(p.data(), "parameter update")?;
    }
    Ok(())
}

/// Adds `scale * grad(key)` into `p`'s grad buffer, allocating it if needed.
/// Returns false when the key has no gradient.
pub(crate) fn add_param_grad<T: Scalar>(
    grads: &Gradients<T>,
    key: usize,
    p: &mut Tensor<T>,
    scale: T,
) -> bool {
    let Some(g) = grads.param(key) else {
        return false;
    };
    if p.grad.is_none() {
        p.grad = Some(vec![T::zero(); p.data.len()]);
    }
    let buf = p.grad.as_mut().expect("allocated");
    buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += scale * b);
    true
}

/// Stateful optimizer for multi-step training. Gradients are read from each
/// parameter's grad buffer and cleared after the step.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    cfg: OptimConfig,
    moments: Vec<(Vec<T>, Vec<T>)>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            moments: Vec::new(),
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn step(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        self.steps += 1;
        let lr = self.cfg.learning_rate;
        let wd = T::of(self.cfg.weight_decay);
        if let Method::Adam { .. } = self.cfg.method {
            if self.moments.len() != params.len() {
                self.moments = params
                    .iter()
                    .map(|p| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]))
                    .collect();
            }
        }
        for (i, p) in params.iter_mut().enumerate() {
            let Tensor { data, grad, .. } = p;
            let Some(g) = grad.as_mut() else { continue };
            check_finite(g, "gradient")?;
            match self.cfg.method {
                Method::Sgd => {
                    let lr = T::of(lr);
                    for (v, gv) in data.iter_mut().zip(g.iter()) {
                        *v -= lr * (*gv + wd * *v);
                    }
                }
                Method::Adam { beta1, beta2, eps } => {
                    let (m, s) = &mut self.moments[i];
                    let t = self.steps as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (b1, b2) = (T::of(beta1), T::of(beta2));
                    let step = T::of(lr / c1);
                    let c2 = T::of(c2);
                    let eps = T::of(eps);
                    let lr = T::of(lr);
                    for j in 0..data.len() {
                        let gv = g[j];
                        m[j] = b1 * m[j] + (T::one() - b1) * gv;
                        s[j] = b2 * s[j] + (T::one() - b2) * gv * gv;
                        let denom = (s[j] / c2).sqrt() + eps;
                        let decay = lr * wd * data[j];
                        data[j] -= step * m[j] / denom + decay;
                    }
                }
            }
            g.iter_mut().for_each(|v| *v = T::zero());
            check_finite(data, "parameter update")?;
        }
        Ok(())
    }
}
