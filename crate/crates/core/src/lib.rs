pub mod cli;
pub mod dataio;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod geometry;
pub mod gradients;
pub mod model;
pub mod postprocess;
pub mod sampler;

pub use error::{Error, Result};
