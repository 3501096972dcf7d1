//! Acoustic scene classification from binaural recordings: feature
//! extraction, mixup, small convolutional networks and a cross-validated
//! training pipeline.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod audio_io;
pub mod augment;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fsutil;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};

/// Single-precision network tensor.
pub type Tensor = nn::Tensor4<f32>;
pub type Tensor64 = nn::Tensor4<f64>;
/// Single-precision model, the precision used for training.
pub type Model = nn::ModelState<f32>;
pub type Model64 = nn::ModelState<f64>;
pub type LogMel = features::LogMelTensor<f32>;
pub type LogMel64 = features::LogMelTensor<f64>;
pub type Extractor = features::FeatureExtractor<f32>;
pub type Extractor64 = features::FeatureExtractor<f64>;
