//! Per-frame feature vectors for the Fréchet distance.

use std::f64::consts::PI;

use crate::gray::LUMA;

/// Maps one frame (`channels × height × width`, pixel range) to a fixed-length vector.
pub trait FeatureExtractor: Sync {
    fn dim(&self) -> usize;
    fn extract(&self, frame: &[f32], channels: usize, height: usize, width: usize) -> Vec<f64>;
}

/// Uses the raw frame values as the feature vector.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlattenFeatures {
    pub dim: usize,
}

impl FeatureExtractor for FlattenFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, frame: &[f32], _: usize, _: usize, _: usize) -> Vec<f64> {
        frame.iter().map(|&v| v as f64).collect()
    }
}

/// The default 32-dimensional handcrafted descriptor:
///
/// - RGB channel means (3) and standard deviations (3)
/// - 4×4 mean-pooled grayscale (16)
/// - 8-bin gradient-orientation histogram, magnitude-weighted and normalized (8)
/// - grayscale standard deviation and mean gradient magnitude (2)
///
/// Single-channel frames are treated as gray RGB.
#[derive(Clone, Copy, Debug, Default)]
pub struct FrameStats;

const BINS: usize = 8;

impl FeatureExtractor for FrameStats {
    fn dim(&self) -> usize {
        32
    }

    fn extract(&self, frame: &[f32], channels: usize, h: usize, w: usize) -> Vec<f64> {
        let plane = h * w;
        let chan = |c: usize| -> &[f32] {
            let c = if channels == 1 { 0 } else { c };
            &frame[c * plane..(c + 1) * plane]
        };
        let mean_std = |xs: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = xs.collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
            (m, var.sqrt())
        };
        let mut out = Vec::with_capacity(32);
        let stats: Vec<(f64, f64)> = (0..3).map(|c| mean_std(&mut chan(c).iter().map(|&v| v as f64))).collect();
        out.extend(stats.iter().map(|s| s.0));
        out.extend(stats.iter().map(|s| s.1));

        let gray: Vec<f64> = (0..plane).map(|p| (0..3).map(|c| LUMA[c] * chan(c)[p] as f64).sum()).collect();
        for by in 0..4 {
            for bx in 0..4 {
                let (y0, y1) = (by * h / 4, ((by + 1) * h / 4).max(by * h / 4 + 1).min(h));
                let (x0, x1) = (bx * w / 4, ((bx + 1) * w / 4).max(bx * w / 4 + 1).min(w));
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += gray[y * w + x];
                    }
                }
                out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }

        let mut hist = [0.0f64; BINS];
        let (mut mag_sum, mut count) = (0.0, 0usize);
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let gx = 0.5 * (gray[y * w + x + 1] - gray[y * w + x - 1]);
                let gy = 0.5 * (gray[(y + 1) * w + x] - gray[(y - 1) * w + x]);
                let mag = (gx * gx + gy * gy).sqrt();
                mag_sum += mag;
                count += 1;
                if mag > 0.0 {
                    let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
                    let bin = ((angle / (2.0 * PI) * BINS as f64) as usize).min(BINS - 1);
                    hist[bin] += mag;
                }
            }
        }
        if mag_sum > 0.0 {
            out.extend(hist.iter().map(|v| v / mag_sum));
        } else {
            out.extend([0.0; BINS]);
        }
        out.push(mean_std(&mut gray.iter().copied()).1);
        out.push(if count > 0 { mag_sum / count as f64 } else { 0.0 });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_frame_descriptor() {
        let frame = [vec![10.0f32; 64], vec![20.0; 64], vec![30.0; 64]].concat();
        let f = FrameStats.extract(&frame, 3, 8, 8);
        assert_eq!(f.len(), FrameStats.dim());
        assert_eq!(&f[..6], &[10.0, 20.0, 30.0, 0.0, 0.0, 0.0]);
        let g = 0.299 * 10.0 + 0.587 * 20.0 + 0.114 * 30.0;
        assert!(f[6..22].iter().all(|v| (v - g).abs() < 1e-12));
        assert!(f[22..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_ramp_lands_in_first_bin() {
        let ramp: Vec<f32> = (0..64).map(|i| (i % 8) as f32 * 10.0).collect();
        let f = FrameStats.extract(&ramp, 1, 8, 8);
        assert_eq!(f[22], 1.0);
        assert!((f[31] - 10.0).abs() < 1e-12);
    }
}
