//! Scene-text removal with gated spatial attention and region-of-interest losses.

pub mod ablation;
pub mod checkpoint;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod ga;
pub mod generator;
pub mod infer;
pub mod losses;
pub mod metrics;
mod nn;
pub mod perceptual;
pub mod trainer;
mod version;

pub use error::{Error, ErrorKind, Result};
pub use version::code_hash;
