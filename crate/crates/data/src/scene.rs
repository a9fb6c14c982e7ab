use editlab_core::{Rng, Shape, ValueDomain, VideoTensor};
use serde::{Deserialize, Serialize};

use crate::edit::{apply_edit, EditSpec};
use crate::grammar::{gen_instruction, Grammar, PALETTE};
use crate::{DataError, Result};

pub type Color = [u8; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Circle,
}

impl ShapeKind {
    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
        }
    }

    /// Whether pixel `(px, py)` lies inside a shape whose `size × size`
    /// bounding box starts at `(x, y)`.
    fn covers(self, size: i64, x: i64, y: i64, px: i64, py: i64) -> bool {
        let (dx, dy) = (px - x, py - y);
        if dx < 0 || dy < 0 || dx >= size || dy >= size {
            return false;
        }
        match self {
            ShapeKind::Square => true,
            ShapeKind::Circle => {
                // Pixel centres against a circle inscribed in the box, in doubled units.
                let (cx, cy) = (2 * dx + 1 - size, 2 * dy + 1 - size);
                cx * cx + cy * cy <= size * size
            }
        }
    }
}

/// Ranges that scenes are sampled from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range of the shape's bounding-box side.
    pub size_min: usize,
    pub size_max: usize,
    /// Velocities satisfy `vx² + vy² ≤ max_speed²`.
    pub max_speed: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { frames: 8, height: 32, width: 32, size_min: 8, size_max: 14, max_speed: 2 }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(DataError::Config("frames and resolution must be nonzero".into()));
        }
        if self.size_min == 0 || self.size_min > self.size_max {
            return Err(DataError::Config(format!(
                "size range {}..={} is empty or starts at zero",
                self.size_min, self.size_max
            )));
        }
        if self.size_max > self.height.min(self.width) {
            return Err(DataError::Config(format!(
                "shapes up to {} px do not fit a {}x{} frame",
                self.size_max, self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> Result<Shape> {
        Ok(Shape::new(self.frames, 3, self.height, self.width)?)
    }
}

/// One fully determined scene: a shape moving linearly with reflecting walls.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: ShapeKind,
    /// Side of the bounding box in pixels.
    pub size: usize,
    pub shape_color: Color,
    pub background: Color,
    /// Top-left corner of the bounding box in frame 0, as `(x, y)`.
    pub position: (i64, i64),
    /// Pixels per frame, as `(vx, vy)`.
    pub velocity: (i64, i64),
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

/// Moves `pos` by `vel` inside `[0, span]`, bouncing off both ends.
fn reflect(pos: i64, vel: i64, span: i64) -> (i64, i64) {
    if span == 0 {
        return (0, 0);
    }
    let (mut p, mut v) = (pos + vel, vel);
    loop {
        if p < 0 {
            p = -p;
            v = v.abs();
        } else if p > span {
            p = 2 * span - p;
            v = -v.abs();
        } else {
            return (p, v);
        }
    }
}

impl SceneSpec {
    /// Draws a scene from `config`'s ranges, with palette colours for shape and background.
    pub fn sample(config: &SceneConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let shape = if rng.below(2) == 0 { ShapeKind::Square } else { ShapeKind::Circle };
        let size = rng.int_range(config.size_min as i64, config.size_max as i64) as usize;
        let fg = rng.below(PALETTE.len() as u64) as usize;
        let mut bg = rng.below(PALETTE.len() as u64 - 1) as usize;
        if bg >= fg {
            bg += 1;
        }
        let x = rng.int_range(0, (config.width - size) as i64);
        let y = rng.int_range(0, (config.height - size) as i64);
        let s = config.max_speed as i64;
        let velocities: Vec<(i64, i64)> = (-s..=s)
            .flat_map(|vx| (-s..=s).map(move |vy| (vx, vy)))
            .filter(|(vx, vy)| vx * vx + vy * vy <= s * s)
            .collect();
        let velocity = *rng.choose(&velocities);
        Ok(SceneSpec {
            shape,
            size,
            shape_color: PALETTE[fg].1,
            background: PALETTE[bg].1,
            position: (x, y),
            velocity,
            frames: config.frames,
            height: config.height,
            width: config.width,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.size == 0 {
            return Err(DataError::Config("frames and shape size must be nonzero".into()));
        }
        if self.size > self.height || self.size > self.width {
            return Err(DataError::Config(format!(
                "{} px shape larger than {}x{} frame",
                self.size, self.height, self.width
            )));
        }
        let (x, y) = self.position;
        if x < 0 || y < 0 || x as usize + self.size > self.width || y as usize + self.size > self.height {
            return Err(DataError::Config(format!("start position {:?} puts the shape outside the frame", self.position)));
        }
        Ok(())
    }

    pub fn tensor_shape(&self) -> Result<Shape> {
        Ok(Shape::new(self.frames, 3, self.height, self.width)?)
    }

    /// Top-left corner in every frame.
    pub fn trajectory(&self) -> Vec<(i64, i64)> {
        let span_x = (self.width - self.size) as i64;
        let span_y = (self.height - self.size) as i64;
        let (mut x, mut y) = self.position;
        let (mut vx, mut vy) = self.velocity;
        let mut out = Vec::with_capacity(self.frames);
        for _ in 0..self.frames {
            out.push((x, y));
            (x, vx) = reflect(x, vx, span_x);
            (y, vy) = reflect(y, vy, span_y);
        }
        out
    }

    /// Shape coverage as a `(f, 1, h, w)` tensor of zeros and ones.
    pub fn mask(&self) -> Result<VideoTensor> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0f32; self.frames * h * w];
        for (i, (x, y)) in self.trajectory().into_iter().enumerate() {
            for py in y..y + self.size as i64 {
                for px in x..x + self.size as i64 {
                    if self.shape.covers(self.size as i64, x, y, px, py) {
                        data[(i * h + py as usize) * w + px as usize] = 1.0;
                    }
                }
            }
        }
        Ok(VideoTensor::from_vec(Shape::new(self.frames, 1, h, w)?, data, ValueDomain::PixelU8)?)
    }
}

/// Renders the scene as an RGB pixel video.
pub fn gen_video(spec: &SceneSpec) -> Result<VideoTensor> {
    let mask = spec.mask()?;
    let shape = spec.tensor_shape()?;
    let plane = shape.plane_len();
    let mut data = vec![0.0f32; shape.len()];
    for f in 0..spec.frames {
        let m = mask.frame(f);
        for c in 0..3 {
            let (fg, bg) = (spec.shape_color[c] as f32, spec.background[c] as f32);
            let out = &mut data[(f * 3 + c) * plane..(f * 3 + c + 1) * plane];
            for (o, &inside) in out.iter_mut().zip(m) {
                *o = if inside > 0.5 { fg } else { bg };
            }
        }
    }
    Ok(VideoTensor::from_vec(shape, data, ValueDomain::PixelU8)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub input: VideoTensor,
    pub instruction: Vec<u32>,
    pub edit: EditSpec,
    pub edited: VideoTensor,
    /// Shape coverage of the input, `(f, 1, h, w)`.
    pub mask: VideoTensor,
}

/// Samples a scene, renders it, draws an instruction and applies the edit.
pub fn gen_triplet(config: &SceneConfig, grammar: &Grammar, rng: &mut Rng) -> Result<Triplet> {
    let scene = SceneSpec::sample(config, rng)?;
    let input = gen_video(&scene)?;
    let mask = scene.mask()?;
    let (instruction, edit) = gen_instruction(rng, grammar, &scene)?;
    let edited = apply_edit(&input, Some(&mask), &edit)?;
    Ok(Triplet { input, instruction, edit, edited, mask })
}
