//! Closed whitespace vocabulary.
//!
//! Ids 0..4 are reserved for the special tokens, in the order
//! `[CLS] [SEP] [MASK] [END]`. Words follow. The file form is one token per
//! line with the line number as id.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub type TokenId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpecialToken {
    Cls,
    Sep,
    Mask,
    End,
}

impl SpecialToken {
    pub const ALL: [SpecialToken; 4] = [Self::Cls, Self::Sep, Self::Mask, Self::End];

    pub const fn id(self) -> TokenId {
        match self {
            Self::Cls => 0,
            Self::Sep => 1,
            Self::Mask => 2,
            Self::End => 3,
        }
    }

    pub const fn text(self) -> &'static str {
        match self {
            Self::Cls => "[CLS]",
            Self::Sep => "[SEP]",
            Self::Mask => "[MASK]",
            Self::End => "[END]",
        }
    }
}

pub const NUM_SPECIAL: usize = 4;
pub const CLS: TokenId = SpecialToken::Cls.id();
pub const SEP: TokenId = SpecialToken::Sep.id();
pub const MASK: TokenId = SpecialToken::Mask.id();
pub const END: TokenId = SpecialToken::End.id();

pub const CLASS_WORDS: [&str; 16] = [
    "circle", "square", "triangle", "star", "heart", "cross", "diamond", "ring", "arrow", "moon",
    "cube", "ball", "box", "cone", "leaf", "bell",
];
pub const COLOR_WORDS: [&str; 6] = ["red", "blue", "green", "yellow", "purple", "orange"];
pub const SIZE_WORDS: [&str; 3] = ["small", "medium", "big"];
pub const FUNCTION_WORDS: [&str; 14] = [
    "a", "an", "the", "and", "of", "left", "right", "above", "below", "next", "to", "with",
    "near", "one",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Specials, class nouns, colors, sizes, then function words.
    pub fn standard() -> Self {
        let words = CLASS_WORDS
            .iter()
            .chain(&COLOR_WORDS)
            .chain(&SIZE_WORDS)
            .chain(&FUNCTION_WORDS)
            .map(|s| s.to_string());
        Self::with_words(words).expect("standard vocabulary is valid")
    }

    pub fn with_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = SpecialToken::ALL.iter().map(|s| s.text().to_string()).collect();
        tokens.extend(words);
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for special in SpecialToken::ALL {
            if tokens.get(special.id()).map(String::as_str) != Some(special.text()) {
                return Err(Error::Format(format!(
                    "vocabulary line {} must be {}",
                    special.id(),
                    special.text()
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid token {t:?} at line {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Parses the one-token-per-line file form.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
    }

    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Result<TokenId> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::Vocabulary(word.to_string()))
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocabulary(format!("#{id}")))
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<TokenId>> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter().map(|&i| self.token(i).map(str::to_string)).collect()
    }

    pub fn is_special(id: TokenId) -> bool {
        id < NUM_SPECIAL
    }

    /// Ids that may replace a word during random corruption.
    pub fn word_ids(&self) -> std::ops::Range<TokenId> {
        NUM_SPECIAL..self.tokens.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_sit_at_head_ids() {
        let v = Vocabulary::standard();
        for s in SpecialToken::ALL {
            assert_eq!(v.id(s.text()).unwrap(), s.id());
        }
        assert!(v.word_ids().all(|i| !Vocabulary::is_special(i)));
    }

    #[test]
    fn file_form_round_trips() {
        let v = Vocabulary::standard();
        assert_eq!(Vocabulary::parse(&v.to_file_string()).unwrap(), v);
    }

    #[test]
    fn rejects_missing_specials_and_unknown_words() {
        assert!(Vocabulary::parse("red\nblue\n").is_err());
        let v = Vocabulary::standard();
        assert!(matches!(v.id("zebra"), Err(Error::Vocabulary(_))));
    }
}
