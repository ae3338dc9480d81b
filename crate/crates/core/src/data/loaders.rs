use std::fs;
use std::path::Path;

use super::{Label, TokenizedDocument, Vocab};
use crate::error::{RanError, Result};

/// One `label<TAB>text` line; multi-label rows carry comma-joined labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextExample {
    pub labels: Vec<String>,
    pub text: String,
}

/// A CoNLL sentence: one token per line, tag in the last column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

/// Validate UTF-8 line by line so errors carry a line number.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path)?;
    bytes_to_lines(&bytes)
}

fn bytes_to_lines(bytes: &[u8]) -> Result<Vec<String>> {
    let mut lines: Vec<String> = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let s = std::str::from_utf8(raw).map_err(|_| RanError::data(i + 1, "invalid UTF-8"))?;
        lines.push(s.to_string());
    }
    if bytes.ends_with(b"\n") {
        lines.pop();
    }
    Ok(lines)
}

pub fn load_tsv_classification(path: impl AsRef<Path>) -> Result<Vec<TextExample>> {
    parse_tsv_classification(&read_lines(path.as_ref())?)
}

pub fn parse_tsv_classification<S: AsRef<str>>(lines: &[S]) -> Result<Vec<TextExample>> {
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| RanError::data(i + 1, "expected label<TAB>text"))?;
        let labels: Vec<String> = label.split(',').map(|l| l.trim().to_string()).collect();
        if labels.iter().any(String::is_empty) {
            return Err(RanError::data(i + 1, "empty label"));
        }
        out.push(TextExample {
            labels,
            text: text.to_string(),
        });
    }
    Ok(out)
}

pub fn load_conll(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    parse_conll(&read_lines(path.as_ref())?)
}

fn valid_tag(tag: &str) -> bool {
    tag == "O"
        || tag
            .strip_prefix("B-")
            .or_else(|| tag.strip_prefix("I-"))
            .is_some_and(|t| !t.is_empty())
}

pub fn parse_conll<S: AsRef<str>>(lines: &[S]) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    let mut cur = Sentence {
        tokens: Vec::new(),
        tags: Vec::new(),
    };
    let flush = |cur: &mut Sentence, out: &mut Vec<Sentence>| {
        if !cur.tokens.is_empty() {
            out.push(std::mem::replace(
                cur,
                Sentence {
                    tokens: Vec::new(),
                    tags: Vec::new(),
                },
            ));
        }
    };
    for (i, line) in lines.iter().enumerate() {
        let line = line.as_ref().trim();
        if line.is_empty() {
            flush(&mut cur, &mut out);
            continue;
        }
        if line.starts_with("-DOCSTART-") {
            flush(&mut cur, &mut out);
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(RanError::data(i + 1, "expected a token and a tag"));
        }
        let tag = cols[cols.len() - 1];
        if !valid_tag(tag) {
            return Err(RanError::data(i + 1, format!("tag {tag:?} is not BIO")));
        }
        cur.tokens.push(cols[0].to_string());
        cur.tags.push(tag.to_string());
    }
    flush(&mut cur, &mut out);
    Ok(out)
}

pub fn load_text_lm(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path.as_ref())?;
    match String::from_utf8(bytes) {
        Ok(s) => Ok(s),
        Err(e) => {
            let bytes = e.into_bytes();
            bytes_to_lines(&bytes)?;
            unreachable!("invalid UTF-8 is reported by line")
        }
    }
}

/// Cut a token stream into `max_len`-token inputs, each paired with the
/// following tokens as next-token targets. Consecutive segments share one
/// boundary token so every token but the first is a target exactly once.
pub fn lm_segments(stream: &[usize], max_len: usize) -> Vec<TokenizedDocument> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < stream.len() {
        let end = (start + max_len + 1).min(stream.len());
        let seg = &stream[start..end];
        let input = seg[..seg.len() - 1].to_vec();
        let targets = seg[1..].to_vec();
        out.push(TokenizedDocument::from_ids(input, max_len, Label::Next(targets)));
        start += max_len;
    }
    out
}

/// Map label names to ids (ordered as given) and encode every example.
pub fn encode_classification(
    examples: &[TextExample],
    vocab: &Vocab,
    labels: &[String],
    max_len: usize,
    multilabel: bool,
) -> Result<Vec<TokenizedDocument>> {
    let lookup = |l: &str, line: usize| {
        labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| RanError::data(line, format!("unknown label {l:?}")))
    };
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let label = if multilabel {
                let mut ids = e.labels.iter().map(|l| lookup(l, i + 1)).collect::<Result<Vec<_>>>()?;
                ids.sort_unstable();
                ids.dedup();
                Label::Labels(ids)
            } else {
                if e.labels.len() != 1 {
                    return Err(RanError::data(i + 1, "single-label task got several labels"));
                }
                Label::Class(lookup(&e.labels[0], i + 1)?)
            };
            Ok(TokenizedDocument::from_ids(vocab.ids(&e.text), max_len, label))
        })
        .collect()
}

/// Sorted distinct labels of a dataset.
pub fn label_inventory(examples: &[TextExample]) -> Vec<String> {
    let mut all: Vec<String> = examples.iter().flat_map(|e| e.labels.iter().cloned()).collect();
    all.sort();
    all.dedup();
    all
}

/// `O` first, then `B-x`, `I-x` for each entity type in sorted order.
pub fn tag_inventory(sentences: &[Sentence]) -> Vec<String> {
    let mut types: Vec<&str> = sentences
        .iter()
        .flat_map(|s| s.tags.iter())
        .filter_map(|t| t.get(2..).filter(|_| t != "O"))
        .collect();
    types.sort_unstable();
    types.dedup();
    let mut out = vec!["O".to_string()];
    for t in types {
        out.push(format!("B-{t}"));
        out.push(format!("I-{t}"));
    }
    out
}

pub fn encode_conll(sentences: &[Sentence], vocab: &Vocab, tags: &[String], max_len: usize) -> Result<Vec<TokenizedDocument>> {
    sentences
        .iter()
        .map(|s| {
            let ids: Vec<usize> = s.tokens.iter().map(|t| vocab.id(t)).collect();
            let mut tag_ids = s
                .tags
                .iter()
                .map(|t| {
                    tags.iter()
                        .position(|x| x == t)
                        .ok_or_else(|| RanError::data(0, format!("tag {t:?} missing from the tag set")))
                })
                .collect::<Result<Vec<_>>>()?;
            tag_ids.truncate(max_len);
            Ok(TokenizedDocument::from_ids(ids, max_len, Label::Tags(tag_ids)))
        })
        .collect()
}
