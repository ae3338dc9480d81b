use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Label, Sentence, TokenMode, TokenizedDocument, Vocab, NUM_RESERVED};

pub const SYNTH_DISTRACTORS: usize = 48;
pub const MARKER_A: [usize; 2] = [NUM_RESERVED, NUM_RESERVED + 1];
pub const MARKER_B: [usize; 2] = [NUM_RESERVED + 2, NUM_RESERVED + 3];
const FIRST_DISTRACTOR: usize = NUM_RESERVED + 4;

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub docs: Vec<TokenizedDocument>,
    pub vocab: Vocab,
}

pub fn synth_vocab() -> Vocab {
    let names = ["A0", "A1", "B0", "B1"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..SYNTH_DISTRACTORS).map(|i| format!("d{i}")));
    Vocab::from_tokens(TokenMode::Word, names).expect("distinct names")
}

/// `n` documents of `len` tokens. One `A` marker sits somewhere in the first
/// window and one `B` marker somewhere in the last; the label is the XOR of
/// their bits. Every other token is a uniformly drawn distractor.
pub fn synth_longrange(n: usize, len: usize, window: usize, seed: u64) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = window.clamp(1, len.max(1));
    let last_start = (len.div_ceil(window) - 1) * window;
    let docs = (0..n)
        .map(|_| {
            let mut ids: Vec<usize> = (0..len)
                .map(|_| FIRST_DISTRACTOR + rng.random_range(0..SYNTH_DISTRACTORS))
                .collect();
            let (a, b) = (rng.random_range(0..2usize), rng.random_range(0..2usize));
            let pa = rng.random_range(0..window.min(len));
            let mut pb = rng.random_range(last_start..len);
            if pb == pa {
                pb = if pb + 1 < len { pb + 1 } else { pb - 1 };
            }
            ids[pa] = MARKER_A[a];
            ids[pb] = MARKER_B[b];
            TokenizedDocument::from_ids(ids, len, Label::Class(a ^ b))
        })
        .collect();
    SynthDataset {
        docs,
        vocab: synth_vocab(),
    }
}

const PER: &[&str] = &[
    "Alice", "Bruno", "Chen", "Dara", "Elena", "Farid", "Greta", "Hiro", "Ines", "Jonas", "Kofi", "Lena", "Mateo",
    "Nadia", "Omar", "Priya",
];
const LOC: &[&str] = &[
    "Lisbon", "Nairobi", "Oslo", "Quito", "Kyoto", "Dakar", "Perth", "Tallinn", "Lima", "Hanoi", "Zagreb", "Cairo",
];
const ORG: &[&str] = &[
    "Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Stark", "Wayne", "Tyrell", "Cyberdyne",
];
const FILLER: &[&str] = &[
    "the", "a", "of", "to", "and", "in", "met", "visited", "said", "that", "with", "from", "at", "on", "for", "by",
    "today", "later", "report", "market", "city", "team", "deal", "new", "old", "big", "small", "early", "late",
    "during", "after", "before", "announced", "joined", "left", "near", "over", "under", "while", "who",
];

/// Sentences whose tags follow fixed rules: a word's entity type comes from
/// its lexicon, entity spans are 1 to 3 words long and never adjacent, and
/// the first word of a span is `B-`, the rest `I-`.
pub fn synth_conll(n: usize, len: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicons = [("PER", PER), ("LOC", LOC), ("ORG", ORG)];
    (0..n)
        .map(|_| {
            let mut tokens = Vec::with_capacity(len);
            let mut tags = Vec::with_capacity(len);
            let mut prev_entity = false;
            while tokens.len() < len {
                if !prev_entity && rng.random_bool(0.2) {
                    let (ty, lex) = lexicons[rng.random_range(0..lexicons.len())];
                    let span = rng.random_range(1..=3usize).min(len - tokens.len());
                    for k in 0..span {
                        tokens.push(lex[rng.random_range(0..lex.len())].to_string());
                        tags.push(format!("{}-{ty}", if k == 0 { "B" } else { "I" }));
                    }
                    prev_entity = true;
                } else {
                    tokens.push(FILLER[rng.random_range(0..FILLER.len())].to_string());
                    tags.push("O".to_string());
                    prev_entity = false;
                }
            }
            Sentence { tokens, tags }
        })
        .collect()
}
