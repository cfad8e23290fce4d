//! Autoencoder and GAN variants for handwritten-character synthesis, built on
//! a small reverse-mode differentiation engine, plus the recognizer-based
//! evaluation harness that scores them.

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod gradcheck;
pub mod nn;
pub mod models;
pub mod recognizer;
pub mod error;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
