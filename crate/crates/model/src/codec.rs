//! Frozen stand-ins for the latent video codec and the instruction encoder.
//!
//! The video codec maps pixels to `[-1, 1]` per frame, optionally 2×2 mean
//! pooled. The instruction encoder is a fixed embedding table gathered by
//! token id. Neither is trained.

use editlab_core::{Rng, Shape, ValueDomain, VideoTensor};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecMode {
    /// Latent equals normalized pixels.
    #[default]
    Identity,
    /// Normalized pixels, 2×2 mean pooled.
    Pooled,
}

impl CodecMode {
    pub fn scale(self) -> usize {
        match self {
            CodecMode::Identity => 1,
            CodecMode::Pooled => 2,
        }
    }

    /// Latent shape for a pixel shape.
    pub fn latent_shape(self, pixels: Shape) -> Result<Shape> {
        let s = self.scale();
        if !pixels.height.is_multiple_of(s) || !pixels.width.is_multiple_of(s) {
            return Err(ModelError::Dimension(format!(
                "pooled codec needs even frame dims, got {}x{}",
                pixels.height, pixels.width
            )));
        }
        Ok(Shape::new(pixels.frames, pixels.channels, pixels.height / s, pixels.width / s)?)
    }
}

/// Encoded video in model range together with the codec that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    tensor: VideoTensor,
    mode: CodecMode,
}

impl LatentVideo {
    pub fn new(tensor: VideoTensor, mode: CodecMode) -> Result<Self> {
        Ok(LatentVideo { tensor: tensor.with_domain(ValueDomain::Model)?, mode })
    }

    pub fn zeros(shape: Shape, mode: CodecMode) -> Self {
        let tensor = VideoTensor::zeros(shape).with_domain(ValueDomain::Model).expect("zeros");
        LatentVideo { tensor, mode }
    }

    pub fn tensor(&self) -> &VideoTensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> VideoTensor {
        self.tensor
    }

    pub fn shape(&self) -> Shape {
        self.tensor.shape()
    }

    pub fn mode(&self) -> CodecMode {
        self.mode
    }

    /// True for the dropped-condition representation.
    pub fn is_null(&self) -> bool {
        self.tensor.data().iter().all(|&v| v == 0.0)
    }
}

/// Maps every frame from pixel range to `[-1, 1]` via `x / 127.5 - 1`.
pub fn encode_video(pixels: &VideoTensor, mode: CodecMode) -> Result<LatentVideo> {
    if let Some(bad) = pixels.data().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(ModelError::Range(format!("pixel value {bad} outside [0, 255]")));
    }
    let shape = pixels.shape();
    let latent_shape = mode.latent_shape(shape)?;
    let norm = |v: f32| (v as f64 / 127.5 - 1.0) as f32;
    let data = match mode {
        CodecMode::Identity => pixels.data().iter().map(|&v| norm(v)).collect(),
        CodecMode::Pooled => {
            let (h, w) = (shape.height, shape.width);
            let (oh, ow) = (latent_shape.height, latent_shape.width);
            let src = pixels.data();
            let mut out = Vec::with_capacity(latent_shape.len());
            for m in 0..shape.frames * shape.channels {
                let plane = &src[m * h * w..(m + 1) * h * w];
                for y in 0..oh {
                    for x in 0..ow {
                        let i = 2 * y * w + 2 * x;
                        let sum = [plane[i], plane[i + 1], plane[i + w], plane[i + w + 1]]
                            .iter()
                            .map(|&v| v as f64 / 127.5 - 1.0)
                            .sum::<f64>();
                        out.push((sum / 4.0) as f32);
                    }
                }
            }
            out
        }
    };
    LatentVideo::new(VideoTensor::from_vec(latent_shape, data, ValueDomain::Model)?, mode)
}

/// Inverse affine map with clamping to `[0, 255]`; pooled latents are
/// nearest-neighbour upsampled.
///
/// Output is quantized to 1/256 of an intensity level, which makes the
/// identity-mode roundtrip exact for integer pixels.
pub fn decode_video(latent: &LatentVideo) -> VideoTensor {
    let pix = |v: f32| -> f32 {
        let p = ((v as f64 + 1.0) * 127.5).clamp(0.0, 255.0);
        ((p * 256.0).round() / 256.0) as f32
    };
    let t = latent.tensor();
    let s = t.shape();
    let (shape, data) = match latent.mode {
        CodecMode::Identity => (s, t.data().iter().map(|&v| pix(v)).collect()),
        CodecMode::Pooled => {
            let shape = Shape::new(s.frames, s.channels, s.height * 2, s.width * 2).expect("upsampled shape");
            let (h, w) = (s.height, s.width);
            let mut out = Vec::with_capacity(shape.len());
            for m in 0..s.frames * s.channels {
                let plane = &t.data()[m * h * w..(m + 1) * h * w];
                for y in 0..2 * h {
                    for x in 0..2 * w {
                        out.push(pix(plane[(y / 2) * w + x / 2]));
                    }
                }
            }
            (shape, out)
        }
    };
    VideoTensor::from_vec(shape, data, ValueDomain::PixelU8).expect("clamped pixels")
}

/// Fixed token-embedding table standing in for a frozen text encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    vocab_size: usize,
    dim: usize,
    table: Vec<f32>,
}

impl TextEncoder {
    /// Draws a `vocab_size × dim` table of standard normals from `seed`.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(ModelError::Config("text encoder needs nonzero vocabulary and dim".into()));
        }
        let table = Rng::new(seed).gaussian_vec(vocab_size * dim).into_iter().map(|v| v as f32).collect();
        Ok(TextEncoder { vocab_size, dim, table })
    }

    pub fn from_table(vocab_size: usize, dim: usize, table: Vec<f32>) -> Result<Self> {
        if vocab_size == 0 || dim == 0 || table.len() != vocab_size * dim {
            return Err(ModelError::Dimension(format!(
                "embedding table of {} values does not match {vocab_size}x{dim}",
                table.len()
            )));
        }
        Ok(TextEncoder { vocab_size, dim, table })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self) -> &[f32] {
        &self.table
    }

    /// Row-gathers the embeddings of `token_ids`.
    pub fn encode(&self, token_ids: &[u32]) -> Result<InstructionEmbedding> {
        if token_ids.is_empty() {
            return Err(ModelError::Vocab("instruction has no tokens".into()));
        }
        let mut data = Vec::with_capacity(token_ids.len() * self.dim);
        for &id in token_ids {
            let i = id as usize;
            if i >= self.vocab_size {
                return Err(ModelError::Vocab(format!(
                    "token id {id} out of vocabulary of size {}",
                    self.vocab_size
                )));
            }
            data.extend_from_slice(&self.table[i * self.dim..(i + 1) * self.dim]);
        }
        Ok(InstructionEmbedding { token_ids: token_ids.to_vec(), dim: self.dim, data, null: false })
    }
}

/// `(tokens × dim)` instruction embedding, or the null condition.
#[derive(Clone, Debug, PartialEq)]
pub struct InstructionEmbedding {
    token_ids: Vec<u32>,
    dim: usize,
    data: Vec<f32>,
    null: bool,
}

impl InstructionEmbedding {
    /// The dropped text condition: a single all-zero row.
    pub fn null(dim: usize) -> Self {
        InstructionEmbedding { token_ids: Vec::new(), dim, data: vec![0.0; dim], null: true }
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn tokens(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `(tokens, dim)` values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Null text and video conditions for a latent of shape `latent_shape`.
pub fn null_conditions(latent_shape: Shape, dim: usize, mode: CodecMode) -> (InstructionEmbedding, LatentVideo) {
    (InstructionEmbedding::null(dim), LatentVideo::zeros(latent_shape, mode))
}
