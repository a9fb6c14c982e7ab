//! Horn–Schunck dense optical flow and the flow-change metric.

use editlab_core::VideoTensor;
use serde::{Deserialize, Serialize};

use crate::gray::{grayscale_frames, GrayFrame};
use crate::{MetricsError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HornSchunck {
    /// Smoothness weight.
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for HornSchunck {
    fn default() -> Self {
        HornSchunck { alpha: 1.0, iterations: 100 }
    }
}

/// Per-pixel displacement `(u, v)` in pixels along x and y.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Neighbourhood average with weights 1/6 on edges and 1/12 on corners,
/// replicating border pixels.
fn local_mean(f: &[f64], h: usize, w: usize, y: usize, x: usize) -> f64 {
    let at = |dy: isize, dx: isize| {
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
        f[yy * w + xx]
    };
    (at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1)) / 6.0
        + (at(-1, -1) + at(-1, 1) + at(1, -1) + at(1, 1)) / 12.0
}

/// Flow from `a` to `b`. Derivatives are averaged over the 2×2×2 cube of the
/// two frames, with borders replicated.
pub fn horn_schunck(a: &GrayFrame, b: &GrayFrame, params: HornSchunck) -> Result<FlowField> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(MetricsError::Dimension("flow frames differ in size".into()));
    }
    if !(params.alpha > 0.0) {
        return Err(MetricsError::Config(format!("alpha must be positive, got {}", params.alpha)));
    }
    let (h, w) = (a.height, a.width);
    let n = h * w;
    let (mut ex, mut ey, mut et) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let p = |f: &GrayFrame, dy: isize, dx: isize| f.clamped(yi + dy, xi + dx);
            let i = y * w + x;
            ex[i] = 0.25
                * (p(a, 0, 1) - p(a, 0, 0) + p(a, 1, 1) - p(a, 1, 0) + p(b, 0, 1) - p(b, 0, 0) + p(b, 1, 1)
                    - p(b, 1, 0));
            ey[i] = 0.25
                * (p(a, 1, 0) - p(a, 0, 0) + p(a, 1, 1) - p(a, 0, 1) + p(b, 1, 0) - p(b, 0, 0) + p(b, 1, 1)
                    - p(b, 0, 1));
            et[i] = 0.25
                * (p(b, 0, 0) - p(a, 0, 0) + p(b, 1, 0) - p(a, 1, 0) + p(b, 0, 1) - p(a, 0, 1) + p(b, 1, 1)
                    - p(a, 1, 1));
        }
    }
    let a2 = params.alpha * params.alpha;
    let (mut u, mut v) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..params.iterations {
        let (mut nu, mut nv) = (vec![0.0; n], vec![0.0; n]);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (ub, vb) = (local_mean(&u, h, w, y, x), local_mean(&v, h, w, y, x));
                let k = (ex[i] * ub + ey[i] * vb + et[i]) / (a2 + ex[i] * ex[i] + ey[i] * ey[i]);
                nu[i] = ub - ex[i] * k;
                nv[i] = vb - ey[i] * k;
            }
        }
        u = nu;
        v = nv;
    }
    Ok(FlowField { height: h, width: w, u, v })
}

/// Mean over `i ≥ 2` of the mean per-pixel `‖flow_i − flow_{i−1}‖₂`, where
/// `flow_i` is the flow from frame `i−1` to frame `i`.
pub fn optical_flow_metric(video: &VideoTensor, params: HornSchunck) -> Result<f64> {
    if video.frames() < 3 {
        return Err(MetricsError::Undefined(format!(
            "optical-flow change needs at least 3 frames, got {}",
            video.frames()
        )));
    }
    let gray = grayscale_frames(video)?;
    let flows = gray.windows(2).map(|p| horn_schunck(&p[0], &p[1], params)).collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for pair in flows.windows(2) {
        let (f0, f1) = (&pair[0], &pair[1]);
        let sum: f64 = (0..f0.u.len())
            .map(|i| ((f1.u[i] - f0.u[i]).powi(2) + (f1.v[i] - f0.v[i]).powi(2)).sqrt())
            .sum();
        total += sum / f0.u.len() as f64;
    }
    Ok(total / (flows.len() - 1) as f64)
}
