//! Shape-guided adversarial defense at desk scale.
//!
//! The pipeline trains a small convolutional classifier against
//! projected-gradient attacks while steering it toward global shape
//! cues: a signed-distance-field encoding of the dominant object
//! modulates adversarial inputs, and a stochastic shallow transform
//! de-biases texture. Everything is deterministic given seeds, CPU
//! only, and free of runtime dependencies.

pub mod adversary;
pub mod config;
pub mod edt;
pub mod encoders;
pub mod error;
pub mod gad;
pub mod imageio;
pub mod instrument;
pub mod nn;
mod ops;
pub mod rng;
pub mod sem;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{BinaryMask, Image, LabelMap, ScalarField};
