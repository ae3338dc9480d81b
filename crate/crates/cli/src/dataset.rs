//! Turn a run config's data section into encoded train/eval splits.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ran_core::data::*;
use ran_core::{RanError, Result, Task};

use crate::run_config::{DataKind, RunConfig};

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<TokenizedDocument>,
    pub eval: Vec<TokenizedDocument>,
    pub vocab: Vocab,
    /// Class names or tag names; empty for language modelling.
    pub labels: Vec<String>,
}

/// Missing or unreadable data files are data errors, not I/O errors.
fn data_err(path: &Path) -> impl Fn(RanError) -> RanError + '_ {
    move |e| match e {
        RanError::Io(io) => RanError::data(0, format!("{}: {io}", path.display())),
        other => other,
    }
}

fn split_tail<X>(mut items: Vec<X>, fraction: f64) -> (Vec<X>, Vec<X>) {
    let held = ((items.len() as f64) * fraction).round() as usize;
    let held = if fraction > 0.0 { held.clamp(1, items.len().saturating_sub(1)) } else { 0 };
    let eval = items.split_off(items.len() - held);
    (items, eval)
}

fn empty_check(p: &Prepared) -> Result<()> {
    if p.train.is_empty() {
        return Err(RanError::data(0, "no training documents"));
    }
    Ok(())
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let d = &cfg.data;
    let m = &cfg.model;
    let p = match d.kind {
        DataKind::SynthLongrange => {
            let set = synth_longrange(d.synth_n, m.max_len, m.window, d.synth_seed);
            let (train, eval) = split_tail(set.docs, d.eval_fraction);
            Prepared {
                train,
                eval,
                vocab: set.vocab,
                labels: vec!["0".into(), "1".into()],
            }
        }
        DataKind::SynthConll => {
            let sentences = synth_conll(d.synth_n, d.synth_sentence_len, d.synth_seed);
            let (train, eval) = split_tail(sentences, d.eval_fraction);
            conll_prepared(&train, &eval, cfg)?
        }
        DataKind::Tsv => {
            let path = d.train_path.as_deref().expect("validated");
            let examples = load_tsv_classification(path).map_err(data_err(path))?;
            let (train, eval) = match &d.eval_path {
                Some(e) => (examples, load_tsv_classification(e).map_err(data_err(e))?),
                None => split_tail(examples, d.eval_fraction),
            };
            let mut labels = label_inventory(&train);
            labels.extend(label_inventory(&eval));
            labels.sort();
            labels.dedup();
            let vocab = build_vocab(train.iter().map(|e| e.text.as_str()), d.token_mode, d.max_vocab)?;
            let multi = m.task == Task::MultiLabel;
            Prepared {
                train: encode_classification(&train, &vocab, &labels, m.max_len, multi)?,
                eval: encode_classification(&eval, &vocab, &labels, m.max_len, multi)?,
                vocab,
                labels,
            }
        }
        DataKind::Conll => {
            let path = d.train_path.as_deref().expect("validated");
            let sentences = load_conll(path).map_err(data_err(path))?;
            let (train, eval) = match &d.eval_path {
                Some(e) => (sentences, load_conll(e).map_err(data_err(e))?),
                None => split_tail(sentences, d.eval_fraction),
            };
            conll_prepared(&train, &eval, cfg)?
        }
        DataKind::Text => {
            let path = d.train_path.as_deref().expect("validated");
            let text = load_text_lm(path).map_err(data_err(path))?;
            let (train_text, eval_text) = match &d.eval_path {
                Some(e) => (text, load_text_lm(e).map_err(data_err(e))?),
                None => {
                    let chars: Vec<char> = text.chars().collect();
                    let cut = chars.len() - ((chars.len() as f64) * d.eval_fraction).round() as usize;
                    (chars[..cut].iter().collect(), chars[cut..].iter().collect())
                }
            };
            let vocab = build_vocab([train_text.as_str()], d.token_mode, d.max_vocab)?;
            Prepared {
                train: lm_segments(&vocab.ids(&train_text), m.max_len),
                eval: lm_documents(&eval_text, &vocab, m.max_len, m.task),
                vocab,
                labels: Vec::new(),
            }
        }
    };
    empty_check(&p)?;
    Ok(p)
}

fn conll_prepared(train: &[Sentence], eval: &[Sentence], cfg: &RunConfig) -> Result<Prepared> {
    let mut all = train.to_vec();
    all.extend_from_slice(eval);
    let labels = tag_inventory(&all);
    let texts: Vec<String> = train.iter().map(|s| s.tokens.join(" ")).collect();
    let vocab = build_vocab(texts.iter().map(String::as_str), TokenMode::Word, cfg.data.max_vocab)?;
    Ok(Prepared {
        train: encode_conll(train, &vocab, &labels, cfg.model.max_len)?,
        eval: encode_conll(eval, &vocab, &labels, cfg.model.max_len)?,
        vocab,
        labels,
    })
}

/// Next-token segments for causal LM. For MLM the segments are corrupted
/// once with a fixed seed so that evaluation is repeatable; training
/// re-masks its documents every epoch.
pub fn lm_documents(text: &str, vocab: &Vocab, max_len: usize, task: Task) -> Vec<TokenizedDocument> {
    let docs = lm_segments(&vocab.ids(text), max_len);
    match task {
        Task::Mlm => {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            docs.iter()
                .map(|d| ran_core::training::mlm_mask(d, vocab.len(), 0.15, &mut rng))
                .collect()
        }
        _ => docs,
    }
}

/// Encode an evaluation file with a checkpoint's vocabulary and labels.
pub fn load_eval_file(path: &Path, task: Task, vocab: &Vocab, labels: &[String], max_len: usize) -> Result<Vec<TokenizedDocument>> {
    let docs = match task {
        Task::Classify | Task::MultiLabel => {
            let ex = load_tsv_classification(path).map_err(data_err(path))?;
            encode_classification(&ex, vocab, labels, max_len, task == Task::MultiLabel)?
        }
        Task::Tag => {
            let s = load_conll(path).map_err(data_err(path))?;
            encode_conll(&s, vocab, labels, max_len)?
        }
        Task::Lm | Task::Mlm => {
            let text = load_text_lm(path).map_err(data_err(path))?;
            lm_documents(&text, vocab, max_len, task)
        }
    };
    if docs.is_empty() {
        return Err(RanError::data(0, format!("{}: no documents", path.display())));
    }
    Ok(docs)
}
