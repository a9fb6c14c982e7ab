//! Forward noising, the denoising + inter-frame consistency objective, and
//! the training step with condition dropout.
//!
//! With `v_i = z_t[i] − n_p[i]` the consistency term is
//! `(1/(f−1)) Σ_{i≥1} mean((v_i − v_{i−1})²)` and the total objective is
//! `mean((n_p − ε)²) + λ · consistency`.

use editlab_core::{Rng, ValueDomain, VideoTensor};
use editlab_data::Triplet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_video, CodecMode, InstructionEmbedding, LatentVideo, TextEncoder};
use crate::denoiser::{build_graph, check_inputs, DenoiserParams, NetInput};
use crate::error::{ModelError, Result};
use crate::scalar::Scalar;
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Linear β schedule over `steps` timesteps.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(ModelError::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(ModelError::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut prod = 1.0;
    let alpha_bars = betas
        .iter()
        .map(|b| {
            prod *= 1.0 - b;
            prod
        })
        .collect();
    Ok(NoiseSchedule { betas, alpha_bars })
}

impl NoiseSchedule {
    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(ModelError::Range(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(1.0 - self.beta(t)?)
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1` for the clean endpoint.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bars[self.check(t)?])
    }
}

/// `sqrt(ᾱ_t)·z0 + sqrt(1−ᾱ_t)·ε`.
pub fn q_sample(z0: &VideoTensor, t: usize, eps: &VideoTensor, schedule: &NoiseSchedule) -> Result<VideoTensor> {
    if z0.shape() != eps.shape() {
        return Err(ModelError::Dimension(format!("z0 {} vs noise {}", z0.shape(), eps.shape())));
    }
    schedule.check(t)?;
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0.data().iter().zip(eps.data()).map(|(&z, &e)| (a * z as f64 + b * e as f64) as f32).collect();
    Ok(VideoTensor::from_vec(z0.shape(), data, ValueDomain::Unconstrained)?)
}

fn same_shape(a: &VideoTensor, b: &VideoTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ModelError::Dimension(format!("shape mismatch {} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn loss_sd(n_p: &VideoTensor, n_gt: &VideoTensor) -> Result<f64> {
    same_shape(n_p, n_gt)?;
    Ok(n_p.mse(n_gt)?)
}

/// `v_i = n_in[i] − n_p[i]` as a one-frame tensor.
pub fn frame_feature(n_in: &VideoTensor, n_p: &VideoTensor, i: usize) -> Result<VideoTensor> {
    same_shape(n_in, n_p)?;
    if i >= n_in.frames() {
        return Err(ModelError::Range(format!("frame {i} of {}", n_in.frames())));
    }
    let data = n_in.frame(i).iter().zip(n_p.frame(i)).map(|(a, b)| a - b).collect();
    Ok(VideoTensor::from_vec(n_in.shape().with_frames(1)?, data, ValueDomain::Unconstrained)?)
}

fn consistency_f64(n_in: &[f64], n_p: &[f64], frames: usize) -> f64 {
    if frames < 2 {
        return 0.0;
    }
    let m = n_in.len() / frames;
    let mut total = 0.0;
    for i in 1..frames {
        let mut s = 0.0;
        for k in 0..m {
            let d = (n_in[i * m + k] - n_p[i * m + k]) - (n_in[(i - 1) * m + k] - n_p[(i - 1) * m + k]);
            s += d * d;
        }
        total += s / m as f64;
    }
    total / (frames - 1) as f64
}

fn widen(v: &VideoTensor) -> Vec<f64> {
    v.data().iter().map(|&x| x as f64).collect()
}

/// Mean squared adjacent-frame difference of `v = n_in − n_p`; zero for one frame.
pub fn loss_consistency(n_in: &VideoTensor, n_p: &VideoTensor) -> Result<f64> {
    same_shape(n_in, n_p)?;
    Ok(consistency_f64(&widen(n_in), &widen(n_p), n_in.frames()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the consistency term.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 1e-3 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    fn combine(&self, sd: f64, fd: f64) -> f64 {
        if self.lambda == 0.0 {
            sd
        } else {
            sd + self.lambda * fd
        }
    }
}

pub fn loss_total(n_p: &VideoTensor, n_gt: &VideoTensor, n_in: &VideoTensor, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let sd = loss_sd(n_p, n_gt)?;
    same_shape(n_p, n_in)?;
    if cfg.lambda == 0.0 {
        return Ok(sd);
    }
    Ok(cfg.combine(sd, loss_consistency(n_in, n_p)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutPolicy {
    pub p_video_only: f64,
    pub p_text_only: f64,
    pub p_both: f64,
}

impl Default for DropoutPolicy {
    fn default() -> Self {
        DropoutPolicy { p_video_only: 0.05, p_text_only: 0.05, p_both: 0.05 }
    }
}

/// Which conditions a training sample sees replaced by the null condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dropped {
    Nothing,
    Video,
    Text,
    Both,
}

impl DropoutPolicy {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_video_only, self.p_text_only, self.p_both];
        if ps.iter().any(|p| !(p >= &0.0)) || ps.iter().sum::<f64>() > 1.0 {
            return Err(ModelError::Config(format!("dropout probabilities {ps:?} must be >= 0 with sum <= 1")));
        }
        Ok(())
    }

    /// One uniform draw, partitioned into the four outcomes.
    pub fn draw(&self, rng: &mut Rng) -> Dropped {
        let u = rng.uniform();
        if u < self.p_video_only {
            Dropped::Video
        } else if u < self.p_video_only + self.p_text_only {
            Dropped::Text
        } else if u < self.p_video_only + self.p_text_only + self.p_both {
            Dropped::Both
        } else {
            Dropped::Nothing
        }
    }
}

/// One fully specified training example for the gradient computation.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub z0: LatentVideo,
    pub t: usize,
    pub eps: VideoTensor,
    pub text: InstructionEmbedding,
    pub video_cond: LatentVideo,
}

/// Loss components averaged over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub loss_sd: f64,
    pub loss_fd: f64,
    pub loss_total: f64,
}

fn sample_gradient<F: Scalar>(
    params: &DenoiserParams<F>,
    item: &TrainItem,
    schedule: &NoiseSchedule,
    cfg: &LossConfig,
) -> Result<(LossParts, Vec<F>)> {
    check_inputs(params.config(), item.z0.tensor(), &item.text, item.video_cond.tensor())?;
    let z_t = q_sample(item.z0.tensor(), item.t, &item.eps, schedule)?;
    let input = NetInput::new(&z_t, item.t, &item.text, item.video_cond.tensor());
    let mut tape = Tape::new();
    let out = build_graph(&mut tape, params, &input, false);
    let n_p: Vec<f64> = tape.value(out).iter().map(|v| Scalar::to_f64(*v)).collect();
    let eps = widen(&item.eps);
    let n_in = widen(&z_t);
    let frames = z_t.frames();
    let n = n_p.len();

    let sd = n_p.iter().zip(&eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / n as f64;
    let fd = consistency_f64(&n_in, &n_p, frames);
    if !sd.is_finite() {
        return Err(ModelError::Numeric { component: "loss_sd", detail: format!("{sd} at t={}", item.t) });
    }
    if !fd.is_finite() {
        return Err(ModelError::Numeric { component: "loss_fd", detail: format!("{fd} at t={}", item.t) });
    }

    let mut seed: Vec<f64> = n_p.iter().zip(&eps).map(|(p, e)| 2.0 * (p - e) / n as f64).collect();
    if cfg.lambda != 0.0 && frames > 1 {
        // d/dv_j of the pair sum; n_p enters v with a minus sign.
        let m = n / frames;
        let scale = cfg.lambda * 2.0 / ((frames - 1) * m) as f64;
        let v = |i: usize, k: usize| n_in[i * m + k] - n_p[i * m + k];
        for j in 0..frames {
            for k in 0..m {
                let mut g = 0.0;
                if j >= 1 {
                    g += v(j, k) - v(j - 1, k);
                }
                if j + 1 < frames {
                    g -= v(j + 1, k) - v(j, k);
                }
                seed[j * m + k] -= scale * g;
            }
        }
    }
    let grads = tape.backward(out, seed.into_iter().map(F::from_f64).collect(), params.groups().len());
    let mut flat = Vec::with_capacity(params.len());
    for (g, group) in grads.into_iter().zip(params.groups()) {
        if g.is_empty() {
            flat.extend(std::iter::repeat_n(F::zero(), group.values.len()));
        } else {
            flat.extend(g);
        }
    }
    let parts = LossParts { loss_sd: sd, loss_fd: fd, loss_total: cfg.combine(sd, fd) };
    Ok((parts, flat))
}

/// Batch-mean loss and its exact gradient with respect to `params.flatten()`.
///
/// Per-sample work runs in parallel; the reduction is in batch order, so the
/// result does not depend on the thread count.
pub fn param_gradients<F: Scalar>(
    params: &DenoiserParams<F>,
    batch: &[TrainItem],
    schedule: &NoiseSchedule,
    cfg: &LossConfig,
) -> Result<(LossParts, Vec<F>)> {
    if batch.is_empty() {
        return Err(ModelError::Precondition("gradient of an empty batch".into()));
    }
    cfg.validate()?;
    let per_sample: Vec<(LossParts, Vec<F>)> = batch
        .par_iter()
        .map(|item| sample_gradient(params, item, schedule, cfg))
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut total = vec![F::zero(); params.len()];
    let mut parts = LossParts::default();
    for (p, g) in &per_sample {
        parts.loss_sd += p.loss_sd * inv;
        parts.loss_fd += p.loss_fd * inv;
        parts.loss_total += p.loss_total * inv;
        for (t, &v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    let inv_f = F::from_f64(inv);
    for t in &mut total {
        *t *= inv_f;
    }
    Ok((parts, total))
}

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f32], grad: &[f32]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(ModelError::Dimension("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i] as f64;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let update = self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            params[i] = (params[i] as f64 - update) as f32;
        }
        Ok(())
    }
}

/// Everything a training step needs besides parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct TrainContext<'a> {
    pub schedule: &'a NoiseSchedule,
    pub loss: LossConfig,
    pub dropout: DropoutPolicy,
    pub text: &'a TextEncoder,
    pub codec: CodecMode,
}

/// Result of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub losses: LossParts,
    pub dropped: Vec<Dropped>,
}

/// Draws `(t, dropout, ε)` per sample, in batch order, and builds the items.
pub fn prepare_batch(batch: &[&Triplet], ctx: &TrainContext<'_>, rng: &mut Rng) -> Result<(Vec<TrainItem>, Vec<Dropped>)> {
    let mut items = Vec::with_capacity(batch.len());
    let mut dropped = Vec::with_capacity(batch.len());
    for trip in batch {
        let z0 = encode_video(&trip.edited, ctx.codec)?;
        let cond = encode_video(&trip.input, ctx.codec)?;
        let t = rng.int_range(1, ctx.schedule.steps() as i64) as usize;
        let d = ctx.dropout.draw(rng);
        let eps = rng.gaussian_like(z0.shape())?;
        let text = match d {
            Dropped::Text | Dropped::Both => InstructionEmbedding::null(ctx.text.dim()),
            _ => ctx.text.encode(&trip.instruction)?,
        };
        let video_cond = match d {
            Dropped::Video | Dropped::Both => LatentVideo::zeros(cond.shape(), ctx.codec),
            _ => cond,
        };
        items.push(TrainItem { z0, t, eps, text, video_cond });
        dropped.push(d);
    }
    Ok((items, dropped))
}

/// One optimizer update on `batch`; `params` is replaced by the updated weights.
pub fn train_step(
    params: &mut DenoiserParams<f32>,
    batch: &[&Triplet],
    ctx: &TrainContext<'_>,
    optimizer: &mut Adam,
    rng: &mut Rng,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(ModelError::Precondition("training step on an empty batch".into()));
    }
    ctx.dropout.validate()?;
    let (items, dropped) = prepare_batch(batch, ctx, rng)?;
    let (losses, grad) = param_gradients(params, &items, ctx.schedule, &ctx.loss)?;
    let mut flat = params.flatten();
    optimizer.update(&mut flat, &grad)?;
    params.assign_flat(&flat)?;
    Ok(StepStats { losses, dropped })
}

/// Parameters of a linear β schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// Training-run settings, readable from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Diffusion steps `T`.
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lambda: f64,
    pub dropout: DropoutPolicy,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            lambda: 1e-3,
            dropout: DropoutPolicy::default(),
            lr: 1e-3,
            steps: 2000,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec { timesteps: self.timesteps, beta_start: self.beta_start, beta_end: self.beta_end }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.schedule_spec().build()
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda: self.lambda }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        self.loss().validate()?;
        self.dropout.validate()?;
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Runs `cfg.steps` optimizer steps on batches drawn uniformly with
/// replacement from `data`, calling `on_step(step, stats)` after each one.
pub fn train(
    params: &mut DenoiserParams<f32>,
    data: &[Triplet],
    text: &TextEncoder,
    codec: CodecMode,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &StepStats),
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::Precondition("no training triplets".into()));
    }
    let schedule = cfg.schedule()?;
    let ctx = TrainContext { schedule: &schedule, loss: cfg.loss(), dropout: cfg.dropout, text, codec };
    let mut optimizer = Adam::new(params.len(), cfg.lr);
    let mut rng = Rng::new(cfg.seed);
    for step in 0..cfg.steps {
        let batch: Vec<&Triplet> =
            (0..cfg.batch_size).map(|_| &data[rng.below(data.len() as u64) as usize]).collect();
        let stats = train_step(params, &batch, &ctx, &mut optimizer, &mut rng)?;
        on_step(step, &stats);
    }
    Ok(())
}
