//! Toolkit for semantic-aware, self-supervised monocular depth estimation
//! trained on a procedural synthetic world.

pub mod cli;
pub mod error;
pub mod evalsuite;
pub mod geometry;
pub mod losses;
pub mod nets;
pub mod synthworld;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
