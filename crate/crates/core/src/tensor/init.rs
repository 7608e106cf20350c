use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConvSpec, Tensor};
use crate::scalar::Scalar;

/// Portable, reproducible generator used for every seeded draw in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `±sqrt(1 / (in_channels * kh * kw))`.
pub fn init_weights<T: Scalar, R: Rng>(spec: &ConvSpec, rng: &mut R) -> Tensor<T> {
    let bound = (1.0 / spec.fan_in() as f64).sqrt();
    let shape = spec.weight_shape();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(&shape, data).expect("weight shape is valid")
}

pub fn init_bias<T: Scalar>(spec: &ConvSpec) -> Tensor<T> {
    Tensor::zeros(&[spec.out_channels]).expect("bias shape is valid")
}
