//! Shared building blocks: the frame-major [`VideoTensor`], a reproducible
//! [`Rng`], the `.vten` binary tensor format and PPM frame export.

mod error;
pub mod ppm;
mod rng;
mod tensor;
mod vocab;
pub mod vten;

pub use error::CoreError;
pub use rng::Rng;
pub use tensor::{Shape, ValueDomain, VideoTensor};
pub use vocab::Vocabulary;
pub use vten::{load_tensor, read_tensor, save_tensor, write_tensor};

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
