//! Two-scale classifier-free guidance and the deterministic editing sampler.

use editlab_core::{Rng, ValueDomain, VideoTensor};
use serde::{Deserialize, Serialize};

use crate::codec::{decode_video, encode_video, CodecMode, InstructionEmbedding, LatentVideo};
use crate::denoiser::{forward, DenoiserParams};
use crate::diffusion::NoiseSchedule;
use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceScales {
    /// Video guidance scale `s_V`.
    pub video: f64,
    /// Text guidance scale `s_T`.
    pub text: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        GuidanceScales { video: 1.5, text: 7.5 }
    }
}

impl GuidanceScales {
    pub fn validate(&self) -> Result<()> {
        if !self.video.is_finite() || !self.text.is_finite() {
            return Err(ModelError::Config(format!("guidance scales must be finite, got {self:?}")));
        }
        Ok(())
    }
}

/// Combines the unconditional, video-only and fully conditioned predictions:
///
/// `e∅∅ + s_V·(e_V − e∅∅) + s_T·(e_VT − e_V)`
///
/// evaluated as `(1 − s_V)·e∅∅ + (s_V − s_T)·e_V + s_T·e_VT`, which returns
/// `e_VT` exactly when both scales are 1 and `e∅∅` exactly when both are 0.
pub fn combine(
    uncond: &VideoTensor,
    video_only: &VideoTensor,
    full: &VideoTensor,
    scales: GuidanceScales,
) -> Result<VideoTensor> {
    scales.validate()?;
    if uncond.shape() != video_only.shape() || uncond.shape() != full.shape() {
        return Err(ModelError::Dimension(format!(
            "guidance inputs differ in shape: {}, {}, {}",
            uncond.shape(),
            video_only.shape(),
            full.shape()
        )));
    }
    let (a, b, c) = (1.0 - scales.video, scales.video - scales.text, scales.text);
    let data = uncond
        .data()
        .iter()
        .zip(video_only.data())
        .zip(full.data())
        .map(|((&u, &v), &f)| (a * u as f64 + b * v as f64 + c * f as f64) as f32)
        .collect();
    Ok(VideoTensor::from_vec(uncond.shape(), data, ValueDomain::Unconstrained)?)
}

/// Guided noise estimate from three denoiser evaluations.
pub fn guided_noise(
    params: &DenoiserParams<f32>,
    z_t: &LatentVideo,
    t: usize,
    text: &InstructionEmbedding,
    video_cond: &LatentVideo,
    scales: GuidanceScales,
) -> Result<VideoTensor> {
    let null_text = InstructionEmbedding::null(text.dim());
    let null_video = LatentVideo::zeros(video_cond.shape(), video_cond.mode());
    let (uncond, (video_only, full)) = rayon::join(
        || forward(params, z_t, t, &null_text, &null_video),
        || {
            rayon::join(
                || forward(params, z_t, t, &null_text, video_cond),
                || forward(params, z_t, t, text, video_cond),
            )
        },
    );
    combine(&uncond?, &video_only?, &full?, scales)
}

/// How the sampler turns a latent into a noise estimate at each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guidance {
    /// Three evaluations combined with the given scales.
    Scaled(GuidanceScales),
    /// A single fully conditioned evaluation.
    Conditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleOptions {
    pub steps: usize,
    pub guidance: Guidance,
    pub codec: CodecMode,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { steps: 50, guidance: Guidance::Scaled(GuidanceScales::default()), codec: CodecMode::Identity }
    }
}

/// The `S` descending timesteps visited by the sampler, `T` first, all ≥ 1.
pub fn timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(ModelError::Config(format!("sampler steps must be in 1..={total}, got {steps}")));
    }
    Ok((0..steps).map(|i| (steps - i) * total / steps).collect())
}

/// Edits `input` (pixel range) according to `instruction` with deterministic
/// DDIM updates started from Gaussian noise drawn from `rng`.
pub fn sample_edit(
    params: &DenoiserParams<f32>,
    input: &VideoTensor,
    instruction: &InstructionEmbedding,
    options: &SampleOptions,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<VideoTensor> {
    let ts = timesteps(schedule.steps(), options.steps)?;
    if let Guidance::Scaled(s) = options.guidance {
        s.validate()?;
    }
    let cond = encode_video(input, options.codec)?;
    let mut z = rng.gaussian_like(cond.shape())?;
    for (i, &t) in ts.iter().enumerate() {
        let prev = ts.get(i + 1).copied().unwrap_or(0);
        let zl = LatentVideo::new(z, options.codec)?;
        let eps = match options.guidance {
            Guidance::Scaled(s) => guided_noise(params, &zl, t, instruction, &cond, s)?,
            Guidance::Conditional => forward(params, &zl, t, instruction, &cond)?,
        };
        let (ab, ab_prev) = (schedule.alpha_bar(t)?, schedule.alpha_bar(prev)?);
        let data = zl
            .tensor()
            .data()
            .iter()
            .zip(eps.data())
            .map(|(&x, &e)| {
                let (x, e) = (x as f64, e as f64);
                let x0 = ((x - (1.0 - ab).sqrt() * e) / ab.sqrt()).clamp(-1.0, 1.0);
                // Noise estimate consistent with the clipped x0.
                let e = (x - ab.sqrt() * x0) / (1.0 - ab).sqrt();
                (ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e) as f32
            })
            .collect();
        z = VideoTensor::from_vec(cond.shape(), data, ValueDomain::Unconstrained)?;
    }
    if let Some(bad) = z.data().iter().find(|v| !v.is_finite()) {
        return Err(ModelError::Numeric { component: "sampler", detail: format!("latent value {bad}") });
    }
    Ok(decode_video(&LatentVideo::new(z, options.codec)?))
}
