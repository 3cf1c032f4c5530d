//! Numerical laboratory for frozen latent reuse versus mixed-projector
//! training in score-based diffusion models on noisy low-dimensional data.

pub mod bounds;
pub mod datamodel;
pub mod error;
pub mod geometry;
pub mod mc;
pub mod report;
pub mod risk;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod trainer;

pub use error::{Error, Result};
