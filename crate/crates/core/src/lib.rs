//! Privacy-preserving rosacea detection on synthetic faces.
//!
//! The pipeline builds a fixed redness-informed mask from the mean face of
//! rosacea-positive training images, multiplies it into every input, trains a
//! compact residual CNN on the masked images, and reports accuracy, recall,
//! precision, and F1 together with a landmark-occlusion privacy audit.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod mask;
pub mod nn;
pub mod synth;

pub use error::{Error, Result};
