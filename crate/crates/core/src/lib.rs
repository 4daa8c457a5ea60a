//! Facial-emotion recognition engine.
//!
//! A small dense-tensor engine with hand-written forward and backward passes,
//! the eight-class emotion CNN built on it, Adam training with class
//! weighting, the image preprocessing pipeline and an evaluation harness.

pub mod error;
pub mod eval;
pub mod fixtures;
pub mod gradcheck;
pub mod label;
pub mod model;
pub mod ops;
pub mod par;
pub mod preprocess;
pub mod real;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use label::EmotionLabel;
pub use model::{build_table1_model, ClassificationResult, Model, ModelSpec};
pub use real::Real;
pub use tensor::Tensor;
