//! No-reference PSNR from a Laplacian noise estimate.

use std::f64::consts::PI;

use editlab_core::VideoTensor;

use crate::gray::{grayscale_frames, GrayFrame};
use crate::{MetricsError, Result};

/// Returned when the noise estimate is below `255·10⁻⁵`.
pub const PSNR_CAP_DB: f64 = 100.0;

/// `σ̂ = sqrt(π/2)/sqrt(20) · mean|I ∗ L|` over interior pixels, with `L` the
/// 4-neighbour Laplacian (its squared taps sum to 20).
pub fn noise_sigma(frame: &GrayFrame) -> Result<f64> {
    let (h, w) = (frame.height, frame.width);
    if h < 3 || w < 3 {
        return Err(MetricsError::Config(format!("NR-PSNR needs frames of at least 3x3, got {h}x{w}")));
    }
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = frame.at(y - 1, x) + frame.at(y + 1, x) + frame.at(y, x - 1) + frame.at(y, x + 1)
                - 4.0 * frame.at(y, x);
            sum += r.abs();
        }
    }
    let mean = sum / ((h - 2) * (w - 2)) as f64;
    Ok((PI / 2.0).sqrt() / 20f64.sqrt() * mean)
}

pub fn nr_psnr_frame(frame: &GrayFrame) -> Result<f64> {
    let sigma = noise_sigma(frame)?;
    if sigma < 255.0 * 1e-5 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(20.0 * (255.0 / sigma).log10())
}

/// Mean per-frame NR-PSNR in dB.
pub fn nr_psnr(video: &VideoTensor) -> Result<f64> {
    let frames = grayscale_frames(video)?;
    let total = frames.iter().map(nr_psnr_frame).sum::<Result<f64>>()?;
    Ok(total / frames.len() as f64)
}
