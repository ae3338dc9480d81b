//! Tokenization, vocabularies, file loaders and synthetic datasets.

mod loaders;
mod synth;
mod vocab;

pub use loaders::*;
pub use synth::*;
pub use vocab::*;

/// Supervision attached to a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    None,
    Class(usize),
    /// Active label ids of a multi-label document.
    Labels(Vec<usize>),
    /// One tag per real token.
    Tags(Vec<usize>),
    /// Next-token targets, one per real token.
    Next(Vec<usize>),
    /// Targets at masked positions only.
    Masked(Vec<Option<usize>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    /// Exactly `L` ids, right-padded with [`PAD`].
    pub ids: Vec<usize>,
    pub true_length: usize,
    pub label: Label,
}

impl TokenizedDocument {
    pub fn from_ids(mut ids: Vec<usize>, max_len: usize, label: Label) -> Self {
        ids.truncate(max_len);
        let true_length = ids.len();
        ids.resize(max_len, PAD);
        TokenizedDocument {
            ids,
            true_length,
            label,
        }
    }

    pub fn valid(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.true_length).collect()
    }
}

/// Truncate `text` to `max_len` tokens and right-pad.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> TokenizedDocument {
    TokenizedDocument::from_ids(vocab.ids(text), max_len, Label::None)
}
