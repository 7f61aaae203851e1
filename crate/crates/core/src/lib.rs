//! Person-specific face de-occlusion.
//!
//! The crate covers the whole pipeline: dataset preparation with
//! landmark-guided headset masks ([`dataio`]), an encoder–decoder generator
//! with spatial attention fusion and a patch discriminator ([`model`]), the
//! training objectives ([`losses`]), pretraining and two-stage fine-tuning
//! ([`training`]), metrics and comparison grids ([`evaluation`]), and the
//! command-line front end ([`cli`]).

pub mod cli;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod losses;
pub mod model;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
