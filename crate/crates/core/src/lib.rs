//! Normalizing flows for likelihood-based out-of-distribution detection.

pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod dist;
pub mod linalg;
pub mod module;
pub mod rng;
pub mod bijections;
pub mod glow;
pub mod model;
pub mod haar;
pub mod waveletflow;
pub mod data;
pub mod image;
pub mod train;
pub mod ood;
