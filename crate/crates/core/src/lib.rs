//! Self-supervised multi-view learning on procedural 3D shapes.
//!
//! The pipeline: sample a random 3D rotation, apply it to a point
//! cloud, render the object from a fixed camera ring before and after,
//! and train a Siamese CNN so that the rotation can be decoded from the
//! per-view features -- jointly with a classification head on the fused
//! original-view descriptor. Everything is deterministic given a seed.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod renderer;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
