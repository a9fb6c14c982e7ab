//! The inflated pseudo-3D noise predictor `e(z_t, t, c_T, c_V)`.
//!
//! Every 3×3 convolution of a small 2D U-Net is applied as a space-only
//! `1×3×3` convolution over all frames, followed by a 3-tap temporal
//! convolution. Attention blocks run spatial self-attention per frame,
//! cross-attention from every position to the instruction tokens, and then
//! temporal self-attention across frames at every spatial location.
//!
//! The video condition is concatenated with `z_t` along channels at the
//! input; the timestep enters through a sinusoidal embedding projected into
//! every residual block.

use std::collections::HashMap;

use editlab_core::{Rng, Shape, ValueDomain, VideoTensor};
use serde::{Deserialize, Serialize};

use crate::codec::{InstructionEmbedding, LatentVideo};
use crate::error::{ModelError, Result};
use crate::scalar::Scalar;
use crate::tape::{AttnLayout, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalInit {
    /// Temporal layers drawn from the same random scheme as spatial ones.
    #[default]
    Random,
    /// Dirac temporal kernels and zeroed temporal-attention outputs, so the
    /// network starts out as the frame-wise 2D network.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Channels of the latent video (and of the predicted noise).
    pub latent_channels: usize,
    pub base_channels: usize,
    /// Resolution levels; spatial dims must be divisible by `2^(levels-1)`.
    pub levels: usize,
    /// Levels that get an attention block after their down-path residual block.
    pub attention_levels: Vec<usize>,
    /// Instruction embedding width.
    pub text_dim: usize,
    /// Sinusoidal timestep embedding width (even).
    pub time_dim: usize,
    pub temporal_init: TemporalInit,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            latent_channels: 3,
            base_channels: 16,
            levels: 2,
            attention_levels: vec![1],
            text_dim: 16,
            time_dim: 32,
            temporal_init: TemporalInit::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform { fan_in: usize },
    Zeros,
    /// Identity temporal kernel: 1 at `[o, o, centre]`.
    Dirac,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.latent_channels == 0 || self.base_channels == 0 || self.text_dim == 0 {
            return bad("channel counts and text_dim must be nonzero");
        }
        if self.levels == 0 || self.levels > 6 {
            return bad("levels must be in 1..=6");
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return bad("time_dim must be even and at least 2");
        }
        if let Some(l) = self.attention_levels.iter().find(|&&l| l >= self.levels) {
            return Err(ModelError::Config(format!("attention level {l} >= levels {}", self.levels)));
        }
        Ok(())
    }

    /// Smallest spatial size divisor the input must satisfy.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    fn has_attention(&self, level: usize) -> bool {
        self.attention_levels.contains(&level)
    }

    /// Parameter groups in flattening order.
    pub fn layout(&self) -> Vec<ParamSpec> {
        let c = self.base_channels;
        let mut out = Vec::new();
        let mut push = |name: String, dims: Vec<usize>, init: Init| out.push(ParamSpec { name, dims, init });
        let weight = |fan_in: usize| Init::Uniform { fan_in };

        push("time.w".into(), vec![c, self.time_dim], weight(self.time_dim));
        push("time.b".into(), vec![c], weight(self.time_dim));
        let cin = 2 * self.latent_channels;
        push("conv_in.w".into(), vec![c, cin, 3, 3], weight(cin * 9));
        push("conv_in.b".into(), vec![c], weight(cin * 9));

        let temporal = |fan_in: usize| match self.temporal_init {
            TemporalInit::Random => Init::Uniform { fan_in },
            TemporalInit::Identity => Init::Dirac,
        };
        let temporal_out = |fan_in: usize| match self.temporal_init {
            TemporalInit::Random => Init::Uniform { fan_in },
            TemporalInit::Identity => Init::Zeros,
        };

        let block = |prefix: &str, push: &mut dyn FnMut(String, Vec<usize>, Init)| {
            push(format!("{prefix}.conv1.w"), vec![c, c, 3, 3], weight(c * 9));
            push(format!("{prefix}.conv1.b"), vec![c], weight(c * 9));
            push(format!("{prefix}.temb.w"), vec![c, c], weight(c));
            push(format!("{prefix}.temb.b"), vec![c], weight(c));
            push(format!("{prefix}.conv2.w"), vec![c, c, 3, 3], weight(c * 9));
            push(format!("{prefix}.conv2.b"), vec![c], weight(c * 9));
            push(format!("{prefix}.tconv.w"), vec![c, c, 3], temporal(c * 3));
            push(format!("{prefix}.tconv.b"), vec![c], temporal_out(c * 3));
        };
        let attention = |prefix: &str, push: &mut dyn FnMut(String, Vec<usize>, Init)| {
            for part in ["q", "k", "v", "o"] {
                push(format!("{prefix}.spatial.{part}.w"), vec![c, c], weight(c));
                push(format!("{prefix}.spatial.{part}.b"), vec![c], weight(c));
            }
            push(format!("{prefix}.cross.q.w"), vec![c, c], weight(c));
            push(format!("{prefix}.cross.q.b"), vec![c], weight(c));
            for part in ["k", "v"] {
                push(format!("{prefix}.cross.{part}.w"), vec![c, self.text_dim], weight(self.text_dim));
                push(format!("{prefix}.cross.{part}.b"), vec![c], weight(self.text_dim));
            }
            push(format!("{prefix}.cross.o.w"), vec![c, c], weight(c));
            push(format!("{prefix}.cross.o.b"), vec![c], weight(c));
            for part in ["q", "k", "v"] {
                push(format!("{prefix}.temporal.{part}.w"), vec![c, c], weight(c));
                push(format!("{prefix}.temporal.{part}.b"), vec![c], weight(c));
            }
            push(format!("{prefix}.temporal.o.w"), vec![c, c], temporal_out(c));
            push(format!("{prefix}.temporal.o.b"), vec![c], temporal_out(c));
        };

        for l in 0..self.levels {
            block(&format!("down{l}"), &mut push);
            if self.has_attention(l) {
                attention(&format!("attn{l}"), &mut push);
            }
        }
        for l in (0..self.levels - 1).rev() {
            block(&format!("up{l}"), &mut push);
        }
        push("conv_out.w".into(), vec![self.latent_channels, c, 3, 3], weight(c * 9));
        push("conv_out.b".into(), vec![self.latent_channels], weight(c * 9));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(ParamSpec::len).sum()
    }
}

/// One named, shaped block of weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<F> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<F>,
}

/// All learnable weights of the denoiser for one [`ArchConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<F = f32> {
    config: ArchConfig,
    groups: Vec<ParamGroup<F>>,
}

impl<F: Scalar> DenoiserParams<F> {
    pub fn init(config: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let groups = config
            .layout()
            .into_iter()
            .map(|spec| {
                let n = spec.len();
                let values = match spec.init {
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        (0..n).map(|_| F::from_f64(rng.uniform_range(-bound, bound))).collect()
                    }
                    Init::Zeros => vec![F::zero(); n],
                    Init::Dirac => {
                        let (cout, cin) = (spec.dims[0], spec.dims[1]);
                        let mut v = vec![F::zero(); n];
                        for o in 0..cout.min(cin) {
                            v[(o * cin + o) * 3 + 1] = F::one();
                        }
                        v
                    }
                };
                ParamGroup { name: spec.name, dims: spec.dims, values }
            })
            .collect();
        Ok(DenoiserParams { config: config.clone(), groups })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn groups(&self) -> &[ParamGroup<F>] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup<F>> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.len());
        for g in &self.groups {
            out.extend_from_slice(&g.values);
        }
        out
    }

    pub fn unflatten(config: &ArchConfig, flat: &[F]) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let total: usize = layout.iter().map(ParamSpec::len).sum();
        if flat.len() != total {
            return Err(ModelError::Dimension(format!(
                "parameter vector has {} values, architecture needs {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        let groups = layout
            .into_iter()
            .map(|spec| {
                let n = spec.len();
                let values = flat[offset..offset + n].to_vec();
                offset += n;
                ParamGroup { name: spec.name, dims: spec.dims, values }
            })
            .collect();
        Ok(DenoiserParams { config: config.clone(), groups })
    }

    /// Rebuilds from named groups, checking names and sizes against the layout.
    pub fn from_groups(config: &ArchConfig, groups: Vec<ParamGroup<F>>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != groups.len() {
            return Err(ModelError::Format(format!(
                "expected {} parameter groups, found {}",
                layout.len(),
                groups.len()
            )));
        }
        for (spec, g) in layout.iter().zip(&groups) {
            if spec.name != g.name || spec.len() != g.values.len() {
                return Err(ModelError::Format(format!(
                    "parameter group {} does not match layout entry {}",
                    g.name, spec.name
                )));
            }
        }
        Ok(DenoiserParams { config: config.clone(), groups })
    }

    pub fn cast<G: Scalar>(&self) -> DenoiserParams<G> {
        DenoiserParams {
            config: self.config.clone(),
            groups: self
                .groups
                .iter()
                .map(|g| ParamGroup {
                    name: g.name.clone(),
                    dims: g.dims.clone(),
                    values: g.values.iter().map(|v| G::from_f64(Scalar::to_f64(*v))).collect(),
                })
                .collect(),
        }
    }

    /// Overwrites all values from a flat vector in layout order.
    pub fn assign_flat(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(ModelError::Dimension("flat parameter length mismatch".into()));
        }
        let mut offset = 0;
        for g in &mut self.groups {
            let n = g.values.len();
            g.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Inflated `(out, in, 1, 3, 3)` kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel3d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub values: Vec<f32>,
}

impl Kernel3d {
    pub fn dims(&self) -> [usize; 5] {
        [self.out_channels, self.in_channels, 1, 3, 3]
    }
}

/// Turns a `(out, in, 3, 3)` kernel into a space-only `(out, in, 1, 3, 3)` kernel.
pub fn inflate2d(kernel: &[f32], dims: [usize; 4]) -> Result<Kernel3d> {
    let [out_channels, in_channels, kh, kw] = dims;
    if kh != 3 || kw != 3 {
        return Err(ModelError::Dimension(format!("expected a 3x3 kernel, got {kh}x{kw}")));
    }
    if out_channels == 0 || in_channels == 0 || kernel.len() != out_channels * in_channels * 9 {
        return Err(ModelError::Dimension(format!(
            "kernel of {} values does not match {dims:?}",
            kernel.len()
        )));
    }
    // The single temporal slice is the 2D kernel, so the memory layout is unchanged.
    Ok(Kernel3d { out_channels, in_channels, values: kernel.to_vec() })
}

/// Applies an inflated kernel to a video: every frame is convolved on its own.
pub fn spatial_conv(video: &VideoTensor, kernel: &Kernel3d, bias: &[f32]) -> Result<VideoTensor> {
    let s = video.shape();
    if s.channels != kernel.in_channels || bias.len() != kernel.out_channels {
        return Err(ModelError::Dimension(format!(
            "kernel {:?} does not fit video {s}",
            kernel.dims()
        )));
    }
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(video.data().to_vec());
    let w = tape.leaf(kernel.values.clone());
    let b = tape.leaf(bias.to_vec());
    let y = tape.conv3x3(x, w, b, s.frames, s.channels, kernel.out_channels, s.height, s.width);
    let shape = s.with_channels(kernel.out_channels)?;
    Ok(VideoTensor::from_vec(shape, tape.value(y).to_vec(), ValueDomain::Unconstrained)?)
}

/// Sinusoidal embedding of a timestep: `[sin(t·ω_i)…, cos(t·ω_i)…]`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Raw inputs to one network evaluation, already in the network's float type.
pub(crate) struct NetInput<F> {
    pub shape: Shape,
    pub z_t: Vec<F>,
    pub video_cond: Vec<F>,
    pub t: usize,
    /// Row-major `(tokens, text_dim)`.
    pub text: Vec<F>,
    pub tokens: usize,
}

impl<F: Scalar> NetInput<F> {
    pub fn new(z_t: &VideoTensor, t: usize, text: &InstructionEmbedding, video_cond: &VideoTensor) -> Self {
        let cast = |v: &[f32]| v.iter().map(|&x| F::from_f64(x as f64)).collect::<Vec<F>>();
        NetInput {
            shape: z_t.shape(),
            z_t: cast(z_t.data()),
            video_cond: cast(video_cond.data()),
            t,
            text: cast(text.data()),
            tokens: text.tokens(),
        }
    }
}

pub(crate) fn check_inputs(
    config: &ArchConfig,
    z_t: &VideoTensor,
    text: &InstructionEmbedding,
    video_cond: &VideoTensor,
) -> Result<()> {
    let s = z_t.shape();
    if video_cond.shape() != s {
        return Err(ModelError::Dimension(format!(
            "z_t {s} and video condition {} differ in shape",
            video_cond.shape()
        )));
    }
    if s.channels != config.latent_channels {
        return Err(ModelError::Dimension(format!(
            "latent has {} channels, network expects {}",
            s.channels, config.latent_channels
        )));
    }
    let m = config.spatial_multiple();
    if !s.height.is_multiple_of(m) || !s.width.is_multiple_of(m) {
        return Err(ModelError::Dimension(format!(
            "frame size {}x{} must be divisible by {m} for {} levels",
            s.height, s.width, config.levels
        )));
    }
    if text.dim() != config.text_dim {
        return Err(ModelError::Dimension(format!(
            "instruction embedding width {} but network expects {}",
            text.dim(),
            config.text_dim
        )));
    }
    Ok(())
}

/// Graph builder over a tape with named parameter lookup.
struct Builder<'t, 'p, F: Scalar> {
    tape: &'t mut Tape<'p, F>,
    params: HashMap<&'p str, Var>,
    channels: usize,
    frames: usize,
    /// Omit every temporal layer (the un-inflated frame-wise 2D network).
    spatial_only: bool,
}

impl<'p, F: Scalar> Builder<'_, 'p, F> {
    fn p(&self, name: &str) -> Var {
        *self.params.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    fn conv(&mut self, x: Var, prefix: &str, cin: usize, cout: usize, h: usize, w: usize) -> Var {
        let (wv, bv) = (self.p(&format!("{prefix}.w")), self.p(&format!("{prefix}.b")));
        self.tape.conv3x3(x, wv, bv, self.frames, cin, cout, h, w)
    }

    fn linear(&mut self, x: Var, prefix: &str, groups: usize, cin: usize, plane: usize) -> Var {
        let (wv, bv) = (self.p(&format!("{prefix}.w")), self.p(&format!("{prefix}.b")));
        self.tape.channel_linear(x, wv, bv, groups, cin, self.channels, plane)
    }

    fn res_block(&mut self, prefix: &str, h: Var, temb: Var, height: usize, width: usize) -> Var {
        let c = self.channels;
        let plane = height * width;
        let a = self.tape.silu(h);
        let a = self.conv(a, &format!("{prefix}.conv1"), c, c, height, width);
        let tb = self.linear(temb, &format!("{prefix}.temb"), 1, c, 1);
        let a = self.tape.add_channel(a, tb, self.frames, c, plane);
        let a = self.tape.silu(a);
        let a = self.conv(a, &format!("{prefix}.conv2"), c, c, height, width);
        let h = self.tape.add(h, a);
        if self.spatial_only {
            return h;
        }
        let (wv, bv) = (self.p(&format!("{prefix}.tconv.w")), self.p(&format!("{prefix}.tconv.b")));
        self.tape.temporal_conv(h, wv, bv, self.frames, c, c, plane)
    }

    fn attn_block(&mut self, prefix: &str, h: Var, text: Var, tokens: usize, plane: usize) -> Var {
        let (c, f) = (self.channels, self.frames);
        let spatial = AttnLayout { groups: f, tokens: plane, dim: c, group_stride: c * plane, token_stride: 1, dim_stride: plane };

        let self_attend = |b: &mut Self, h: Var, part: &str, layout: AttnLayout| -> Var {
            let q = b.linear(h, &format!("{prefix}.{part}.q"), f, c, plane);
            let k = b.linear(h, &format!("{prefix}.{part}.k"), f, c, plane);
            let v = b.linear(h, &format!("{prefix}.{part}.v"), f, c, plane);
            let o = b.tape.attention(q, k, v, layout, layout);
            let o = b.linear(o, &format!("{prefix}.{part}.o"), f, c, plane);
            b.tape.add(h, o)
        };

        let h = self_attend(self, h, "spatial", spatial);

        // Cross-attention: text keys/values are `[c, tokens]`, shared by all frames.
        let shared = AttnLayout { groups: 1, tokens, dim: c, group_stride: 0, token_stride: 1, dim_stride: tokens };
        let q = self.linear(h, &format!("{prefix}.cross.q"), f, c, plane);
        let td = self.tape.value(text).len() / tokens;
        let k = self.linear(text, &format!("{prefix}.cross.k"), 1, td, tokens);
        let v = self.linear(text, &format!("{prefix}.cross.v"), 1, td, tokens);
        let o = self.tape.attention(q, k, v, spatial, shared);
        let o = self.linear(o, &format!("{prefix}.cross.o"), f, c, plane);
        let h = self.tape.add(h, o);

        if self.spatial_only {
            return h;
        }
        let temporal = AttnLayout { groups: plane, tokens: f, dim: c, group_stride: 1, token_stride: c * plane, dim_stride: plane };
        self_attend(self, h, "temporal", temporal)
    }
}

/// Records the full network on `tape` and returns the predicted-noise node.
pub(crate) fn build_graph<'p, F: Scalar>(
    tape: &mut Tape<'p, F>,
    params: &'p DenoiserParams<F>,
    input: &NetInput<F>,
    spatial_only: bool,
) -> Var {
    let cfg = &params.config;
    let s = input.shape;
    let lc = cfg.latent_channels;
    let c = cfg.base_channels;

    let vars = params
        .groups
        .iter()
        .enumerate()
        .map(|(i, g)| (g.name.as_str(), tape.param(i, &g.values)))
        .collect();
    let mut b = Builder { tape, params: vars, channels: c, frames: s.frames, spatial_only };

    let z = b.tape.leaf(input.z_t.clone());
    let cv = b.tape.leaf(input.video_cond.clone());
    let x = b.tape.concat_channels(z, cv, s.frames, lc, lc, s.plane_len());

    let sinus = b.tape.leaf(timestep_embedding(input.t, cfg.time_dim).into_iter().map(F::from_f64).collect());
    let temb = b.linear(sinus, "time", 1, cfg.time_dim, 1);
    let temb = b.tape.silu(temb);

    // Instruction tokens, transposed to channel-major `[text_dim, tokens]`.
    let n = input.tokens;
    let td = input.text.len() / n;
    let mut text_t = vec![F::zero(); input.text.len()];
    for tok in 0..n {
        for d in 0..td {
            text_t[d * n + tok] = input.text[tok * td + d];
        }
    }
    let text = b.tape.leaf(text_t);

    let (mut hh, mut ww) = (s.height, s.width);
    let mut h = b.conv(x, "conv_in", 2 * lc, c, hh, ww);
    let mut skips = Vec::new();
    for l in 0..cfg.levels {
        h = b.res_block(&format!("down{l}"), h, temb, hh, ww);
        if cfg.has_attention(l) {
            h = b.attn_block(&format!("attn{l}"), h, text, n, hh * ww);
        }
        if l + 1 < cfg.levels {
            skips.push(h);
            h = b.tape.avg_pool2(h, s.frames * c, hh, ww);
            hh /= 2;
            ww /= 2;
        }
    }
    for l in (0..cfg.levels - 1).rev() {
        h = b.tape.upsample2(h, s.frames * c, hh, ww);
        hh *= 2;
        ww *= 2;
        h = b.tape.add(h, skips[l]);
        h = b.res_block(&format!("up{l}"), h, temb, hh, ww);
    }
    let h = b.tape.silu(h);
    b.conv(h, "conv_out", c, lc, hh, ww)
}

fn run<F: Scalar>(
    params: &DenoiserParams<F>,
    z_t: &VideoTensor,
    t: usize,
    text: &InstructionEmbedding,
    video_cond: &VideoTensor,
    spatial_only: bool,
) -> Result<Vec<F>> {
    check_inputs(&params.config, z_t, text, video_cond)?;
    if t == 0 {
        return Err(ModelError::Range("timestep must be at least 1".into()));
    }
    let input = NetInput::new(z_t, t, text, video_cond);
    let mut tape = Tape::new();
    let out = build_graph(&mut tape, params, &input, spatial_only);
    Ok(tape.value(out).to_vec())
}

fn to_tensor<F: Scalar>(shape: Shape, values: Vec<F>) -> Result<VideoTensor> {
    let data = values.into_iter().map(|v| v.to_f64() as f32).collect();
    Ok(VideoTensor::from_vec(shape, data, ValueDomain::Unconstrained)?)
}

/// Predicted noise `n_p = e(z_t, t, c_T, c_V)`, same shape as `z_t`.
pub fn forward<F: Scalar>(
    params: &DenoiserParams<F>,
    z_t: &LatentVideo,
    t: usize,
    text: &InstructionEmbedding,
    video_cond: &LatentVideo,
) -> Result<VideoTensor> {
    let out = run(params, z_t.tensor(), t, text, video_cond.tensor(), false)?;
    to_tensor(z_t.shape(), out)
}

/// The frame-wise 2D network: identical weights with every temporal layer
/// removed, evaluated on each frame independently.
pub fn forward_framewise_2d<F: Scalar>(
    params: &DenoiserParams<F>,
    z_t: &LatentVideo,
    t: usize,
    text: &InstructionEmbedding,
    video_cond: &LatentVideo,
) -> Result<VideoTensor> {
    let mut frames = Vec::with_capacity(z_t.shape().frames);
    for i in 0..z_t.shape().frames {
        let zi = z_t.tensor().select_frames(&[i])?;
        let ci = video_cond.tensor().select_frames(&[i])?;
        let out = run(params, &zi, t, text, &ci, true)?;
        frames.push(to_tensor(zi.shape(), out)?);
    }
    Ok(VideoTensor::concat_frames(&frames)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{CodecMode, TextEncoder};

    fn tiny(init: TemporalInit) -> ArchConfig {
        ArchConfig {
            latent_channels: 3,
            base_channels: 4,
            levels: 2,
            attention_levels: vec![1],
            text_dim: 4,
            time_dim: 4,
            temporal_init: init,
        }
    }

    fn latent(rng: &mut Rng, dims: [usize; 4]) -> LatentVideo {
        LatentVideo::new(rng.gaussian(dims).unwrap(), CodecMode::Identity).unwrap()
    }

    /// Direct nested-loop 2D convolution with zero padding.
    fn conv2d_naive(img: &[f32], cin: usize, h: usize, w: usize, k: &[f32], cout: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; cout * h * w];
        for o in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0f64;
                    for i in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += k[((o * cin + i) * 3 + ky) * 3 + kx] as f64
                                    * img[(i * h + sy as usize) * w + sx as usize] as f64;
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn inflation_copies_kernel_into_single_slice() {
        let mut k = vec![0.0f32; 9];
        k[4] = 1.0;
        let k3 = inflate2d(&k, [1, 1, 3, 3]).unwrap();
        assert_eq!(k3.dims(), [1, 1, 1, 3, 3]);
        assert_eq!(k3.values, k);

        let big = Rng::new(1).gaussian_vec(8 * 4 * 9).into_iter().map(|v| v as f32).collect::<Vec<_>>();
        assert_eq!(inflate2d(&big, [8, 4, 3, 3]).unwrap().dims(), [8, 4, 1, 3, 3]);
        assert!(matches!(inflate2d(&[0.0; 25], [1, 1, 5, 5]), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn inflated_conv_on_one_frame_is_2d_conv() {
        let mut rng = Rng::new(2);
        let (cin, cout, h, w) = (3, 5, 6, 7);
        let k: Vec<f32> = rng.gaussian_vec(cout * cin * 9).into_iter().map(|v| v as f32).collect();
        let frame = rng.gaussian([1, cin, h, w]).unwrap();
        let out = spatial_conv(&frame, &inflate2d(&k, [cout, cin, 3, 3]).unwrap(), &vec![0.0; cout]).unwrap();
        let expect = conv2d_naive(frame.data(), cin, h, w, &k, cout);
        for (a, b) in out.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn layout_and_flatten_roundtrip() {
        let cfg = tiny(TemporalInit::Random);
        let p = DenoiserParams::<f32>::init(&cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(p.len(), cfg.param_count());
        let back = DenoiserParams::unflatten(&cfg, &p.flatten()).unwrap();
        assert_eq!(back, p);
        assert!(DenoiserParams::<f32>::unflatten(&cfg, &p.flatten()[1..]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = tiny(TemporalInit::Random);
        let a = DenoiserParams::<f32>::init(&cfg, &mut Rng::new(5)).unwrap().flatten();
        let b = DenoiserParams::<f32>::init(&cfg, &mut Rng::new(5)).unwrap().flatten();
        let c = DenoiserParams::<f32>::init(&cfg, &mut Rng::new(6)).unwrap().flatten();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn identity_init_sets_dirac_and_zero_output() {
        let p = DenoiserParams::<f32>::init(&tiny(TemporalInit::Identity), &mut Rng::new(1)).unwrap();
        let t = p.group("down0.tconv.w").unwrap();
        assert_eq!(t.values[1], 1.0);
        assert_eq!(t.values.iter().sum::<f32>(), 4.0);
        assert!(p.group("attn1.temporal.o.w").unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_matches_input_for_one_and_two_levels() {
        for levels in [1, 2] {
            let mut cfg = tiny(TemporalInit::Random);
            cfg.levels = levels;
            cfg.attention_levels = vec![levels - 1];
            let mut rng = Rng::new(9);
            let p = DenoiserParams::<f32>::init(&cfg, &mut rng).unwrap();
            let z = latent(&mut rng, [3, 3, 4, 6]);
            let cv = latent(&mut rng, [3, 3, 4, 6]);
            let text = TextEncoder::random(10, 4, 0).unwrap().encode(&[1, 2]).unwrap();
            let out = forward(&p, &z, 10, &text, &cv).unwrap();
            assert_eq!(out.shape(), z.shape());
        }
    }

    #[test]
    fn mismatched_condition_shape_rejected() {
        let cfg = tiny(TemporalInit::Random);
        let mut rng = Rng::new(9);
        let p = DenoiserParams::<f32>::init(&cfg, &mut rng).unwrap();
        let z = latent(&mut rng, [3, 3, 4, 4]);
        let cv = latent(&mut rng, [2, 3, 4, 4]);
        let text = InstructionEmbedding::null(4);
        assert!(matches!(forward(&p, &z, 1, &text, &cv), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn conditioning_changes_output() {
        let cfg = tiny(TemporalInit::Random);
        let mut rng = Rng::new(4);
        let p = DenoiserParams::<f32>::init(&cfg, &mut rng).unwrap();
        let z = latent(&mut rng, [2, 3, 4, 4]);
        let cv = latent(&mut rng, [2, 3, 4, 4]);
        let enc = TextEncoder::random(10, 4, 0).unwrap();
        let base = forward(&p, &z, 5, &enc.encode(&[1, 2, 3]).unwrap(), &cv).unwrap();
        let other_token = forward(&p, &z, 5, &enc.encode(&[1, 7, 3]).unwrap(), &cv).unwrap();
        assert!(base.max_abs_diff(&other_token).unwrap() > 0.0);
        let null_video = LatentVideo::zeros(z.shape(), CodecMode::Identity);
        let dropped = forward(&p, &z, 5, &enc.encode(&[1, 2, 3]).unwrap(), &null_video).unwrap();
        assert!(base.max_abs_diff(&dropped).unwrap() > 0.0);
    }

    #[test]
    fn identity_init_matches_framewise_2d_network() {
        let cfg = tiny(TemporalInit::Identity);
        let mut rng = Rng::new(8);
        let p = DenoiserParams::<f32>::init(&cfg, &mut rng).unwrap();
        let z = latent(&mut rng, [4, 3, 4, 4]);
        let cv = latent(&mut rng, [4, 3, 4, 4]);
        let text = TextEncoder::random(10, 4, 0).unwrap().encode(&[3, 4]).unwrap();
        let video = forward(&p, &z, 17, &text, &cv).unwrap();
        let oracle = forward_framewise_2d(&p, &z, 17, &text, &cv).unwrap();
        assert!(video.max_abs_diff(&oracle).unwrap() < 1e-5);

        // Random temporal layers couple frames, so the equivalence must break.
        let pr = DenoiserParams::<f32>::init(&tiny(TemporalInit::Random), &mut Rng::new(8)).unwrap();
        let video = forward(&pr, &z, 17, &text, &cv).unwrap();
        let oracle = forward_framewise_2d(&pr, &z, 17, &text, &cv).unwrap();
        assert!(video.max_abs_diff(&oracle).unwrap() > 1e-3);
    }

    #[test]
    fn sinusoid_layout() {
        let e = timestep_embedding(0, 6);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let e = timestep_embedding(3, 4);
        assert!((e[0] - 3f64.sin()).abs() < 1e-15);
        assert!((e[3] - (3.0 * 0.01f64).cos()).abs() < 1e-15);
    }
}
