//! Desk-scale FMCW MIMO radar pipeline for 3D human pose estimation:
//! scene synthesis, the ADC-to-4D-tensor chain, CA-CFAR point clouds, a
//! high-resolution 3D convolutional pose network, decoding, and metrics.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the default pipeline.

pub mod cfar;
pub mod container;
pub mod decode;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod pose;
pub mod scalar;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision ADC cube as stored on disk.
pub type AdcCubeF32 = sim::AdcCube<f32>;
pub type AdcCubeF64 = sim::AdcCube<f64>;
pub type RadarTensorF32 = dsp::RadarTensor4D<f32>;
pub type RadarTensorF64 = dsp::RadarTensor4D<f64>;
pub type RangeDopplerCubeF32 = dsp::RangeDopplerCube<f32>;
pub type RangeDopplerCubeF64 = dsp::RangeDopplerCube<f64>;
