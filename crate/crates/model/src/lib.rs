//! Latent codec, inflated denoiser, diffusion training and guided sampling.

pub mod checkpoint;
pub mod codec;
pub mod denoiser;
pub mod diffusion;
mod error;
pub mod guidance;
mod scalar;
pub mod tape;

pub use error::{ModelError, Result};
pub use scalar::Scalar;
