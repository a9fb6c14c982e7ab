use editlab_core::{ValueDomain, VideoTensor};
use serde::{Deserialize, Serialize};

use crate::grammar::PALETTE;
use crate::scene::Color;
use crate::{DataError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditType {
    AttributeModification,
    BackgroundChange,
    StyleTransfer,
}

impl EditType {
    pub const ALL: [EditType; 3] =
        [EditType::AttributeModification, EditType::BackgroundChange, EditType::StyleTransfer];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Grayscale,
    Invert,
    Sepia,
}

impl Style {
    pub const ALL: [Style; 3] = [Style::Grayscale, Style::Invert, Style::Sepia];

    pub fn word(self) -> &'static str {
        match self {
            Style::Grayscale => "grayscale",
            Style::Invert => "invert",
            Style::Sepia => "sepia",
        }
    }

    pub fn map(self, [r, g, b]: [f32; 3]) -> [f32; 3] {
        let mix = |wr: f32, wg: f32, wb: f32| (wr * r + wg * g + wb * b).round().clamp(0.0, 255.0);
        match self {
            Style::Grayscale => {
                let y = mix(0.299, 0.587, 0.114);
                [y, y, y]
            }
            Style::Invert => [255.0 - r, 255.0 - g, 255.0 - b],
            Style::Sepia => [mix(0.393, 0.769, 0.189), mix(0.349, 0.686, 0.168), mix(0.272, 0.534, 0.131)],
        }
    }
}

/// What an instruction asks for. Colours are indices into [`PALETTE`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditSpec {
    Recolor { color: u8 },
    Background { color: u8 },
    Style(Style),
}

impl EditSpec {
    pub fn edit_type(&self) -> EditType {
        match self {
            EditSpec::Recolor { .. } => EditType::AttributeModification,
            EditSpec::Background { .. } => EditType::BackgroundChange,
            EditSpec::Style(_) => EditType::StyleTransfer,
        }
    }

    /// Target colour for recolour and background edits.
    pub fn color(&self) -> Option<Color> {
        match *self {
            EditSpec::Recolor { color } | EditSpec::Background { color } => {
                PALETTE.get(color as usize).map(|c| c.1)
            }
            EditSpec::Style(_) => None,
        }
    }

    /// One-byte code: edit type in the high nibble, payload index in the low nibble.
    pub fn code(&self) -> u8 {
        match *self {
            EditSpec::Recolor { color } => color,
            EditSpec::Background { color } => 0x10 | color,
            EditSpec::Style(s) => 0x20 | Style::ALL.iter().position(|&x| x == s).unwrap_or(0) as u8,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        let (kind, payload) = (code >> 4, code & 0x0f);
        let bad = || DataError::Format(format!("unknown edit code {code:#04x}"));
        match kind {
            0 | 1 if (payload as usize) < PALETTE.len() => Ok(if kind == 0 {
                EditSpec::Recolor { color: payload }
            } else {
                EditSpec::Background { color: payload }
            }),
            2 => Style::ALL.get(payload as usize).map(|&s| EditSpec::Style(s)).ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

/// Applies `spec` to an RGB pixel video. Recolour and background edits need
/// the `(f, 1, h, w)` shape mask.
pub fn apply_edit(video: &VideoTensor, mask: Option<&VideoTensor>, spec: &EditSpec) -> Result<VideoTensor> {
    let s = video.shape();
    if s.channels != 3 {
        return Err(DataError::Contract(format!("edits need RGB video, got {} channels", s.channels)));
    }
    let plane = s.plane_len();
    let mut data = video.data().to_vec();
    match spec {
        EditSpec::Style(style) => {
            for frame in data.chunks_exact_mut(3 * plane) {
                let (r, rest) = frame.split_at_mut(plane);
                let (g, b) = rest.split_at_mut(plane);
                for p in 0..plane {
                    [r[p], g[p], b[p]] = style.map([r[p], g[p], b[p]]);
                }
            }
        }
        EditSpec::Recolor { .. } | EditSpec::Background { .. } => {
            let mask = mask.ok_or_else(|| DataError::Contract("this edit needs the shape mask".into()))?;
            let ms = mask.shape();
            if (ms.frames, ms.channels, ms.height, ms.width) != (s.frames, 1, s.height, s.width) {
                return Err(DataError::Contract(format!("mask {ms} does not cover video {s}")));
            }
            let color = spec.color().ok_or_else(|| DataError::Contract("colour index outside the palette".into()))?;
            let inside = matches!(spec, EditSpec::Recolor { .. });
            for f in 0..s.frames {
                let m = mask.frame(f);
                for (c, &value) in color.iter().enumerate() {
                    let chan = &mut data[(f * 3 + c) * plane..(f * 3 + c + 1) * plane];
                    for (v, &mv) in chan.iter_mut().zip(m) {
                        if (mv > 0.5) == inside {
                            *v = value as f32;
                        }
                    }
                }
            }
        }
    }
    Ok(VideoTensor::from_vec(s, data, ValueDomain::PixelU8)?)
}

/// Applies a global colour map; no mask needed.
pub fn apply_style(video: &VideoTensor, style: Style) -> Result<VideoTensor> {
    apply_edit(video, None, &EditSpec::Style(style))
}
