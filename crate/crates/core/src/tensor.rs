use std::fmt;

use crate::{CoreError, Result};

/// Extent of a video tensor in frame-major order: frames, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    /// Validates that every dimension is nonzero and the element count fits in memory.
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let shape = Shape { frames, channels, height, width };
        shape.checked_len()?;
        Ok(shape)
    }

    pub fn from_dims(dims: [usize; 4]) -> Result<Self> {
        Self::new(dims[0], dims[1], dims[2], dims[3])
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    fn checked_len(&self) -> Result<usize> {
        let dims = self.dims();
        if dims.contains(&0) {
            return Err(CoreError::Dimension(format!("zero dimension in {self}")));
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= isize::MAX as usize))
            .ok_or_else(|| CoreError::Dimension(format!("shape {self} overflows")))?;
        Ok(len)
    }

    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one frame (`c * h * w`).
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn with_frames(&self, frames: usize) -> Result<Self> {
        Self::new(frames, self.channels, self.height, self.width)
    }

    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        Self::new(self.frames, channels, self.height, self.width)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.frames, self.channels, self.height, self.width)
    }
}

/// Which numeric range a tensor's values are meant to live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ValueDomain {
    Unconstrained,
    /// Pixel intensities in `[0, 255]`.
    PixelU8,
    /// Normalized model values, nominally `[-1, 1]`.
    Model,
}

impl ValueDomain {
    pub fn tag(self) -> u8 {
        match self {
            ValueDomain::Unconstrained => 0,
            ValueDomain::PixelU8 => 1,
            ValueDomain::Model => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ValueDomain::Unconstrained),
            1 => Some(ValueDomain::PixelU8),
            2 => Some(ValueDomain::Model),
            _ => None,
        }
    }
}

/// Dense `f × c × h × w` array of 32-bit floats, row-major and frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    shape: Shape,
    domain: ValueDomain,
    data: Vec<f32>,
}

impl VideoTensor {
    pub fn new(dims: [usize; 4], fill: f32) -> Result<Self> {
        let shape = Shape::from_dims(dims)?;
        Ok(Self::filled(shape, fill))
    }

    pub fn filled(shape: Shape, fill: f32) -> Self {
        VideoTensor { shape, domain: ValueDomain::Unconstrained, data: vec![fill; shape.len()] }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    /// Wraps existing data, checking its length and (for pixel tensors) its range.
    pub fn from_vec(shape: Shape, data: Vec<f32>, domain: ValueDomain) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(CoreError::Dimension(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if domain == ValueDomain::PixelU8 {
            if let Some(bad) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
                return Err(CoreError::Value(format!("pixel value {bad} outside [0, 255]")));
            }
        }
        Ok(VideoTensor { shape, domain, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dims(&self) -> [usize; 4] {
        self.shape.dims()
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Retags the tensor; fails if the values violate the pixel range.
    pub fn with_domain(self, domain: ValueDomain) -> Result<Self> {
        Self::from_vec(self.shape, self.data, domain)
    }

    pub fn frames(&self) -> usize {
        self.shape.frames
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        let n = self.shape.frame_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn frame_iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.shape.frame_len())
    }

    #[inline]
    pub fn index(&self, frame: usize, channel: usize, y: usize, x: usize) -> usize {
        let s = &self.shape;
        ((frame * s.channels + channel) * s.height + y) * s.width + x
    }

    #[inline]
    pub fn at(&self, frame: usize, channel: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(frame, channel, y, x)]
    }

    /// Copies the listed frames into a new tensor, in the given order.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Self> {
        let shape = self.shape.with_frames(indices.len())?;
        let mut data = Vec::with_capacity(shape.len());
        for &i in indices {
            if i >= self.shape.frames {
                return Err(CoreError::Dimension(format!(
                    "frame {i} out of range for {} frames",
                    self.shape.frames
                )));
            }
            data.extend_from_slice(self.frame(i));
        }
        Ok(VideoTensor { shape, domain: self.domain, data })
    }

    /// Applies `f` elementwise; the result is unconstrained.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        VideoTensor {
            shape: self.shape,
            domain: ValueDomain::Unconstrained,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f32> {
        if self.shape != other.shape {
            return Err(CoreError::Dimension(format!(
                "shape mismatch {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn mse(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(CoreError::Dimension(format!(
                "shape mismatch {} vs {}",
                self.shape, other.shape
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Concatenates videos with equal per-frame shape along the frame axis.
    pub fn concat_frames(parts: &[VideoTensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| CoreError::Dimension("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut frames = 0;
        for p in parts {
            let s = p.shape;
            if (s.channels, s.height, s.width)
                != (first.shape.channels, first.shape.height, first.shape.width)
            {
                return Err(CoreError::Dimension(format!(
                    "frame shape mismatch {} vs {}",
                    s, first.shape
                )));
            }
            frames += s.frames;
            data.extend_from_slice(&p.data);
        }
        let domain = if parts.iter().all(|p| p.domain == first.domain) {
            first.domain
        } else {
            ValueDomain::Unconstrained
        };
        Ok(VideoTensor { shape: first.shape.with_frames(frames)?, domain, data })
    }
}
