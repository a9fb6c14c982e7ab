use editlab_core::VideoTensor;

use crate::{MetricsError, Result};

/// Luma weights for RGB input.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// One grayscale frame, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayFrame {
    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with coordinates clamped to the frame.
    #[inline]
    pub fn clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.data[y * self.width + x]
    }
}

/// Converts every frame of a 1- or 3-channel video to grayscale.
pub fn grayscale_frames(video: &VideoTensor) -> Result<Vec<GrayFrame>> {
    let s = video.shape();
    let plane = s.plane_len();
    let convert = |frame: &[f32]| -> Vec<f64> {
        match s.channels {
            1 => frame.iter().map(|&v| v as f64).collect(),
            _ => (0..plane)
                .map(|p| (0..3).map(|c| LUMA[c] * frame[c * plane + p] as f64).sum())
                .collect(),
        }
    };
    if s.channels != 1 && s.channels != 3 {
        return Err(MetricsError::Dimension(format!("expected 1 or 3 channels, got {}", s.channels)));
    }
    Ok(video
        .frame_iter()
        .map(|f| GrayFrame { height: s.height, width: s.width, data: convert(f) })
        .collect())
}
