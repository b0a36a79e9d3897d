//! Segmentation networks with a latent 4-DOF transform module, the
//! augmentation, loss and evaluation machinery around them, and an analytic
//! phantom dataset.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used for training.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod geometry;
pub mod labels;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod nnops;
pub mod phantom;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod tensor;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor4F32 = tensor::Tensor4<f32>;
pub type Tensor4F64 = tensor::Tensor4<f64>;
pub type FeatureMapF32 = tensor::FeatureMap<f32>;
pub type FeatureMapF64 = tensor::FeatureMap<f64>;
pub type AffineParamsF64 = geometry::AffineParams<f64>;
pub type AffineTransformF64 = geometry::AffineTransform2D<f64>;
pub type LatentAugmentationF32 = geometry::LatentAugmentation<f32>;
pub type NetworkF32 = network::Network<f32>;
pub type NetworkF64 = network::Network<f64>;
