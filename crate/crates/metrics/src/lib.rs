//! Temporal-consistency and quality metrics for short pixel-range videos.
//!
//! | metric | group | better |
//! |---|---|---|
//! | frame differencing | consistency | lower |
//! | optical-flow change | consistency | lower |
//! | block matching NCC | consistency | higher |
//! | no-reference PSNR | quality | higher |
//! | Fréchet feature distance | quality | lower |

mod block;
mod error;
mod features;
mod frechet;
mod gray;
mod noise;
mod optical_flow;
mod report;

pub use block::{block_match_pair, block_matching, BlockMatch};
pub use error::MetricsError;
pub use features::{FeatureExtractor, FlattenFeatures, FrameStats};
pub use frechet::{frechet_distance, frechet_from_features, GaussianFit};
pub use gray::{grayscale_frames, GrayFrame};
pub use noise::{noise_sigma, nr_psnr, nr_psnr_frame};
pub use optical_flow::{horn_schunck, optical_flow_metric, FlowField, HornSchunck};
pub use report::{frame_differencing, report, Consistency, Direction, MetricsConfig, MetricsReport, Quality};

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;
