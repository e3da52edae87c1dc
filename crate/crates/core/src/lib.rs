//! Two-stage patch-attention classifier for pneumonia detection on chest
//! radiographs.
//!
//! Stage one is a convolutional patch classifier trained on random
//! sub-windows of the working-resolution image. Sliding it over the image
//! yields a binary heatmap. Stage two fuses that heatmap with a downscaled
//! copy of the image to produce the final diagnosis.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod models;
pub mod optim;
pub mod patching;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
