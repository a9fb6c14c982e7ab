use editlab_core::{Rng, Vocabulary};

use crate::edit::{EditSpec, EditType, Style};
use crate::scene::{Color, SceneSpec, ShapeKind};
use crate::{DataError, Result};

/// Named colours used for scenes and edit targets.
pub const PALETTE: [(&str, Color); 8] = [
    ("red", [255, 0, 0]),
    ("green", [0, 200, 0]),
    ("blue", [0, 0, 255]),
    ("yellow", [255, 255, 0]),
    ("cyan", [0, 255, 255]),
    ("magenta", [255, 0, 255]),
    ("orange", [255, 128, 0]),
    ("purple", [128, 0, 255]),
];

const FUNCTION_WORDS: [&str; 7] = ["turn", "the", "into", "change", "background", "to", "style"];

/// The closed instruction grammar:
///
/// ```text
/// turn the <shape> into <color>
/// change background to <color>
/// turn to <style> style
/// ```
#[derive(Clone, Debug)]
pub struct Grammar {
    vocab: Vocabulary,
}

impl Default for Grammar {
    fn default() -> Self {
        let mut words: Vec<&str> = FUNCTION_WORDS.to_vec();
        words.extend([ShapeKind::Square.word(), ShapeKind::Circle.word()]);
        words.extend(PALETTE.iter().map(|p| p.0));
        words.extend(Style::ALL.map(Style::word));
        Grammar { vocab: Vocabulary::new(&words).expect("grammar words are distinct") }
    }
}

fn color_index(word: &str) -> Option<u8> {
    PALETTE.iter().position(|p| p.0 == word).map(|i| i as u8)
}

impl Grammar {
    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn render(&self, spec: &EditSpec, shape: ShapeKind) -> Result<String> {
        let name = |c: u8| {
            PALETTE
                .get(c as usize)
                .map(|p| p.0)
                .ok_or_else(|| DataError::Grammar(format!("colour index {c} outside the palette")))
        };
        Ok(match *spec {
            EditSpec::Recolor { color } => format!("turn the {} into {}", shape.word(), name(color)?),
            EditSpec::Background { color } => format!("change background to {}", name(color)?),
            EditSpec::Style(s) => format!("turn to {} style", s.word()),
        })
    }

    /// Parses an instruction back to its edit. Recolour instructions also
    /// yield the shape they name.
    pub fn parse(&self, text: &str) -> Result<(EditSpec, Option<ShapeKind>)> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let fail = || DataError::Grammar(format!("{text:?}"));
        match words.as_slice() {
            ["turn", "the", shape, "into", color] => {
                let shape = match *shape {
                    "square" => ShapeKind::Square,
                    "circle" => ShapeKind::Circle,
                    _ => return Err(fail()),
                };
                let color = color_index(color).ok_or_else(fail)?;
                Ok((EditSpec::Recolor { color }, Some(shape)))
            }
            ["change", "background", "to", color] => {
                Ok((EditSpec::Background { color: color_index(color).ok_or_else(fail)? }, None))
            }
            ["turn", "to", style, "style"] => {
                let s = Style::ALL.into_iter().find(|s| s.word() == *style).ok_or_else(fail)?;
                Ok((EditSpec::Style(s), None))
            }
            _ => Err(fail()),
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        Ok(self.vocab.tokenize(text)?)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(self.vocab.detokenize(ids)?)
    }
}

/// Draws an edit for `scene` and renders it as token ids.
///
/// Edit types are uniform. Target colours are drawn from the palette entries
/// that differ from both the shape and the background colour.
pub fn gen_instruction(rng: &mut Rng, grammar: &Grammar, scene: &SceneSpec) -> Result<(Vec<u32>, EditSpec)> {
    let kind = EditType::ALL[rng.below(3) as usize];
    let spec = match kind {
        EditType::AttributeModification | EditType::BackgroundChange => {
            let free: Vec<u8> = PALETTE
                .iter()
                .enumerate()
                .filter(|(_, p)| p.1 != scene.shape_color && p.1 != scene.background)
                .map(|(i, _)| i as u8)
                .collect();
            let color = *rng.choose(&free);
            if kind == EditType::AttributeModification {
                EditSpec::Recolor { color }
            } else {
                EditSpec::Background { color }
            }
        }
        EditType::StyleTransfer => EditSpec::Style(*rng.choose(&Style::ALL)),
    };
    let text = grammar.render(&spec, scene.shape)?;
    Ok((grammar.encode(&text)?, spec))
}
