//! Character vocabulary with the reserved decoder symbols.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Ordered character set. Indices `0..len()` are characters, followed by
/// `EOS`, `START` and `PAD`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if c.is_control() || c.is_whitespace() {
                return Err(Error::Vocab(format!("unprintable vocabulary entry {c:?}")));
            }
            if index.insert(c, i).is_some() {
                return Err(Error::Vocab(format!("duplicate vocabulary entry {c:?}")));
            }
        }
        if chars.is_empty() {
            return Err(Error::Vocab("empty vocabulary".into()));
        }
        Ok(CharVocab { chars, index })
    }

    /// Digits then lowercase Latin letters.
    pub fn alphanumeric() -> Self {
        Self::new(('0'..='9').chain('a'..='z')).expect("static vocabulary")
    }

    /// One character per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut chars = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(Error::Parse {
                        line: n + 1,
                        msg: format!("expected one character, got {line:?}"),
                    })
                }
            }
        }
        Self::new(chars)
    }

    pub fn to_file_string(&self) -> String {
        self.chars.iter().map(|c| format!("{c}\n")).collect()
    }

    /// Number of characters, excluding reserved symbols.
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn eos(&self) -> usize {
        self.chars.len()
    }

    pub fn start(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn pad(&self) -> usize {
        self.chars.len() + 2
    }

    /// Output classes of the decoder: characters plus `EOS`.
    pub fn num_classes(&self) -> usize {
        self.chars.len() + 1
    }

    /// Rows of the input embedding: characters, `EOS`, `START`.
    pub fn num_inputs(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Character indices of `text`, without `EOS`.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::Vocab(format!("character {c:?} not in vocabulary")))
            })
            .collect()
    }

    /// Text of the character indices up to the first reserved symbol.
    pub fn decode(&self, idx: &[usize]) -> String {
        idx.iter()
            .take_while(|&&i| i < self.chars.len())
            .map(|&i| self.chars[i])
            .collect()
    }

    pub fn contains_all(&self, text: &str) -> bool {
        text.chars().all(|c| self.index.contains_key(&c))
    }
}
