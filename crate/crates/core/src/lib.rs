//! Synthetic smart-meter feature tables and a privacy / utility / fidelity
//! benchmark for them.
//!
//! The numeric kernels ([`autodiff`], [`linalg`], [`fidelity::Kde`]) are
//! generic over [`Scalar`] (`f32` or `f64`); the pipeline runs in `f64`
//! through the aliases below.

pub mod autodiff;
pub mod classifiers;
pub mod error;
pub mod features;
pub mod fidelity;
pub mod generators;
pub mod ingest;
pub mod linalg;
pub mod pipeline;
pub mod privacy;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Mlp = autodiff::Mlp<f64>;
pub type Matrix = linalg::Matrix<f64>;
