//! Obstacle detection, monocular depth estimation and spoken-announcement
//! pipeline for walking assistance.
//!
//! The numeric core is generic over [`Scalar`]; production paths run in
//! `f32` through the aliases below.

pub mod assist;
pub mod depth;
pub mod detector;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod preprocess;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Scalar, Strided};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tensor::Tape<f32>;
