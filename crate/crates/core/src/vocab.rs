use std::collections::HashMap;
use std::path::Path;

use crate::{CoreError, Result};

/// Token list where the line number of a token is its id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        let mut list = Vec::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            let t = t.as_ref();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(CoreError::Format(format!("invalid token {t:?} on line {}", i + 1)));
            }
            if ids.insert(t.to_string(), i as u32).is_some() {
                return Err(CoreError::Format(format!("duplicate token {t:?}")));
            }
            list.push(t.to_string());
        }
        Ok(Vocabulary { tokens: list, ids })
    }

    /// Parses the plain-text form: one token per line.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
        let end = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
        Self::new(&lines[..end])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Whitespace tokenization; unknown words are an error.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| CoreError::Value(format!("unknown word {w:?}"))))
            .collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String> {
        let words: Result<Vec<&str>> = ids
            .iter()
            .map(|&i| self.token(i).ok_or_else(|| CoreError::Value(format!("token id {i} out of range"))))
            .collect();
        Ok(words?.join(" "))
    }
}
