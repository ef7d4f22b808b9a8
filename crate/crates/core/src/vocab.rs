//! Symbol table shared by the policy and the prompt builder.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rewards::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub const EOS: TokenId = TokenId(0);
pub const THINK_OPEN_ID: TokenId = TokenId(1);
pub const THINK_CLOSE_ID: TokenId = TokenId(2);
pub const ANSWER_OPEN_ID: TokenId = TokenId(3);
pub const ANSWER_CLOSE_ID: TokenId = TokenId(4);
pub const PROMPT_END: TokenId = TokenId(5);
/// Separates the question from the observation in symbolic prompts.
pub const OBS_MARK: TokenId = TokenId(6);
/// Introduces the option texts of a close-ended prompt.
pub const OPTIONS_MARK: TokenId = TokenId(7);

/// Reserved symbols, in id order.
pub const RESERVED: [&str; 8] = [
    "<eos>",
    THINK_OPEN,
    THINK_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
    "<prompt_end>",
    "<obs>",
    "<options>",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("duplicate symbol `{0}`")]
    Duplicate(String),
    #[error("reserved symbol table is corrupt at position {0}")]
    ReservedMismatch(usize),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("token id {0} out of range")]
    OutOfRange(u32),
    #[error("empty symbol")]
    EmptySymbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocab {
    /// Reserved symbols followed by `words`, sorted and deduplicated.
    pub fn build<I, S>(words: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut extra: Vec<String> = words.into_iter().map(|w| w.as_ref().to_string()).collect();
        extra.sort();
        extra.dedup();
        let mut symbols: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        symbols.extend(extra);
        Self::from_symbols(symbols)
    }

    /// Rebuilds a vocabulary from its exact symbol list (checkpoint load).
    pub fn from_symbols(symbols: Vec<String>) -> Result<Self, VocabError> {
        for (i, r) in RESERVED.iter().enumerate() {
            if symbols.get(i).map(String::as_str) != Some(*r) {
                return Err(VocabError::ReservedMismatch(i));
            }
        }
        let mut index = BTreeMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(VocabError::EmptySymbol);
            }
            if index.insert(s.clone(), TokenId(i as u32)).is_some() {
                return Err(VocabError::Duplicate(s.clone()));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Result<TokenId, VocabError> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| VocabError::UnknownSymbol(symbol.to_string()))
    }

    pub fn get(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: TokenId) -> Result<&str, VocabError> {
        self.symbols
            .get(id.index())
            .map(String::as_str)
            .ok_or(VocabError::OutOfRange(id.0))
    }

    pub fn check(&self, ids: &[TokenId]) -> Result<(), VocabError> {
        match ids.iter().find(|t| t.index() >= self.len()) {
            Some(t) => Err(VocabError::OutOfRange(t.0)),
            None => Ok(()),
        }
    }

    /// Renders tokens as text. Tags are emitted literally with no spacing,
    /// punctuation attaches to the preceding word, other words are separated
    /// by single spaces. Rendering stops at the first EOS.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let mut out = String::new();
        let mut prev_word = false;
        for &id in ids {
            if id == EOS {
                break;
            }
            let sym = self.symbol(id)?;
            if is_reserved(id) {
                out.push_str(sym);
                prev_word = false;
            } else {
                if prev_word && !is_attached_punct(sym) {
                    out.push(' ');
                }
                out.push_str(sym);
                prev_word = true;
            }
        }
        Ok(out)
    }
}

pub fn is_reserved(id: TokenId) -> bool {
    id.index() < RESERVED.len()
}

/// Symbols that attach to the previous word when rendered.
pub fn is_attached_punct(sym: &str) -> bool {
    matches!(sym, "," | "." | "?" | "!" | ":" | ";" | ")")
}

/// Splits free text into word symbols: whitespace first, then trailing
/// punctuation peeled off into its own symbols. Inverts
/// [`Vocab::detokenize`] on single-spaced text.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        let mut tail = Vec::new();
        let mut word = piece;
        while let Some(last) = word.chars().last() {
            let s = &word[word.len() - last.len_utf8()..];
            if word.len() > s.len() && is_attached_punct(s) {
                tail.push(s.to_string());
                word = &word[..word.len() - s.len()];
            } else {
                break;
            }
        }
        out.push(word.to_string());
        out.extend(tail.into_iter().rev());
    }
    out
}
