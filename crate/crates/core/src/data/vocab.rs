use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{RanError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const MASK: usize = 4;
pub const NUM_RESERVED: usize = 5;
pub const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<unk>", "<bos>", "<eos>", "<mask>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenMode {
    Char,
    Word,
}

impl FromStr for TokenMode {
    type Err = RanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(TokenMode::Char),
            "word" => Ok(TokenMode::Word),
            other => Err(RanError::config(format!("unknown tokenizer mode {other:?}"))),
        }
    }
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenMode::Char => "char",
            TokenMode::Word => "word",
        })
    }
}

pub fn tokenize(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Char => text.chars().map(String::from).collect(),
        TokenMode::Word => text.split_whitespace().map(String::from).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    mode: TokenMode,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved entries followed by `tokens`; duplicates are rejected.
    pub fn from_tokens(mode: TokenMode, tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut v = Vocab {
            mode,
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens) {
            if v.index.contains_key(&t) {
                return Err(RanError::config(format!("duplicate vocabulary entry {t:?}")));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Entries after the reserved block, in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[NUM_RESERVED..]
    }

    pub fn ids(&self, text: &str) -> Vec<usize> {
        tokenize(text, self.mode).iter().map(|t| self.id(t)).collect()
    }

    /// Pads are dropped; other reserved ids print as their names.
    pub fn decode(&self, ids: &[usize]) -> String {
        let parts: Vec<&str> = ids.iter().filter(|&&i| i != PAD).map(|&i| self.token(i)).collect();
        match self.mode {
            TokenMode::Char => parts.concat(),
            TokenMode::Word => parts.join(" "),
        }
    }
}

/// Frequency-ordered vocabulary, ties broken lexicographically. `max_size`
/// counts the reserved ids.
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>, mode: TokenMode, max_size: usize) -> Result<Vocab> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for t in tokenize(text, mode) {
            *counts.entry(t).or_default() += 1;
        }
    }
    for r in RESERVED {
        counts.remove(r);
    }
    if counts.is_empty() {
        return Err(RanError::data(0, "cannot build a vocabulary from an empty corpus"));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let keep = max_size.saturating_sub(NUM_RESERVED);
    Vocab::from_tokens(mode, ranked.into_iter().take(keep).map(|(t, _)| t))
}
