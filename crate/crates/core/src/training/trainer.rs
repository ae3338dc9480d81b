use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::losses::{mlm_mask, nll_sum, row_targets};
use super::metrics::{accuracy, entity_f1, micro_f1};
use super::optimizer::{adam_step, clip_grad_norm, AdamState};
use crate::config::Task;
use crate::data::{Label, TokenizedDocument};
use crate::error::{RanError, Result};
use crate::heads::{argmax, TagSet};
use crate::model::RanModel;
use crate::numerics::{Graph, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate every this many steps; 0 evaluates at the end of each epoch.
    pub eval_every: usize,
    pub clip_norm: Option<f64>,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Process batch items one after another instead of on the thread pool.
    pub sequential: bool,
    pub mlm_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            batch_size: 16,
            epochs: 1,
            seed: 0,
            eval_every: 0,
            clip_norm: None,
            max_steps: None,
            sequential: false,
            mlm_prob: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(RanError::config("lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(RanError::config("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mlm_prob) {
            return Err(RanError::config("mlm_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricKind {
    Accuracy,
    MicroF1,
    EntityF1,
    Perplexity,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Classify => MetricKind::Accuracy,
            Task::MultiLabel => MetricKind::MicroF1,
            Task::Tag => MetricKind::EntityF1,
            Task::Lm | Task::Mlm => MetricKind::Perplexity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::MicroF1 => "micro_f1",
            MetricKind::EntityF1 => "entity_f1",
            MetricKind::Perplexity => "perplexity",
        }
    }

    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Perplexity => a < b,
            _ => a > b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean loss per document (per target token for the LM tasks).
    pub loss: f64,
    pub metric: f64,
    pub kind: MetricKind,
}

/// Per-document outcome of an evaluation pass.
enum Scored {
    Class(usize, usize, f64),
    Labels(Vec<usize>, Vec<usize>, f64),
    Tags(Vec<usize>, Vec<usize>, f64),
    Tokens(f64, usize),
}

fn score<T: Scalar>(model: &RanModel<T>, doc: &TokenizedDocument, tags: Option<&TagSet>) -> Result<Scored> {
    let logits = model.logits(doc)?;
    let n = model.config.num_labels;
    Ok(match &doc.label {
        Label::Class(c) => {
            let ce = nll_sum(&logits, &[Some(*c)]).0;
            Scored::Class(argmax(logits.row(0)), *c, ce)
        }
        Label::Labels(gold) => {
            let row = logits.row(0);
            let pred = (0..n).filter(|&i| row[i] > T::zero()).collect();
            let y: Vec<bool> = (0..n).map(|i| gold.contains(&i)).collect();
            let loss = super::losses::bce_multilabel(row, &y);
            Scored::Labels(pred, gold.clone(), loss)
        }
        Label::Tags(gold) => {
            let ts = tags.ok_or_else(|| RanError::config("tag evaluation needs a tag set"))?;
            let pred = ts.decode(&logits, doc.true_length);
            let (nll, cnt) = nll_sum(&logits, &row_targets(doc));
            Scored::Tags(pred, gold.clone(), nll / cnt.max(1) as f64)
        }
        Label::Next(_) | Label::Masked(_) => {
            let (nll, cnt) = nll_sum(&logits, &row_targets(doc));
            Scored::Tokens(nll, cnt)
        }
        Label::None => return Err(RanError::config("cannot evaluate an unlabeled document")),
    })
}

fn map_docs<R: Send>(
    docs: &[TokenizedDocument],
    sequential: bool,
    f: impl Fn(&TokenizedDocument) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    if sequential {
        docs.iter().map(f).collect()
    } else {
        docs.par_iter().map(&f).collect()
    }
}

/// Task metric and mean loss over `docs`.
pub fn evaluate<T: Scalar>(
    model: &RanModel<T>,
    docs: &[TokenizedDocument],
    tags: Option<&TagSet>,
    sequential: bool,
) -> Result<EvalReport> {
    let kind = MetricKind::for_task(model.config.task);
    if docs.is_empty() {
        return Err(RanError::config("evaluation set is empty"));
    }
    let scored = map_docs(docs, sequential, |d| score(model, d, tags))?;
    let mut loss = 0.0;
    let (mut pc, mut gc) = (Vec::new(), Vec::new());
    let (mut pl, mut gl) = (Vec::new(), Vec::new());
    let mut sentences = Vec::new();
    let (mut nll, mut tokens) = (0.0, 0usize);
    for s in scored {
        match s {
            Scored::Class(p, g, l) => {
                pc.push(p);
                gc.push(g);
                loss += l;
            }
            Scored::Labels(p, g, l) => {
                pl.push(p);
                gl.push(g);
                loss += l;
            }
            Scored::Tags(p, g, l) => {
                let ts = tags.expect("checked in score");
                let names = |v: &[usize]| v.iter().map(|&i| ts.name(i).to_string()).collect::<Vec<_>>();
                sentences.push((names(&g), names(&p)));
                loss += l;
            }
            Scored::Tokens(l, c) => {
                nll += l;
                tokens += c;
            }
        }
    }
    let per_doc = loss / docs.len() as f64;
    let (loss, metric) = match kind {
        MetricKind::Accuracy => (per_doc, accuracy(&pc, &gc)),
        MetricKind::MicroF1 => (per_doc, micro_f1(&pl, &gl)),
        MetricKind::EntityF1 => (per_doc, entity_f1(&sentences)),
        MetricKind::Perplexity => {
            let mean = nll / tokens.max(1) as f64;
            (mean, mean.exp())
        }
    };
    Ok(EvalReport { loss, metric, kind })
}

/// Mean loss and summed parameter gradients over a batch.
pub fn batch_gradients<T: Scalar>(
    model: &RanModel<T>,
    batch: &[TokenizedDocument],
    sequential: bool,
) -> Result<(f64, Vec<Option<Tensor<T>>>)> {
    let per_doc = map_docs(batch, sequential, |doc| {
        let mut g = Graph::new(&model.params);
        let (loss, _) = model.loss(&mut g, doc)?;
        let value = g.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
        Ok((value, g.backward(loss)?.into_params()))
    })?;
    let mut total = 0.0;
    let mut sum: Vec<Option<Tensor<T>>> = vec![None; model.params.len()];
    for (loss, grads) in per_doc {
        total += loss;
        for (slot, g) in sum.iter_mut().zip(grads) {
            if let Some(g) = g {
                match slot {
                    Some(s) => s.add_assign(&g),
                    None => *slot = Some(g),
                }
            }
        }
    }
    let scale = T::one() / T::of_usize(batch.len());
    for g in sum.iter_mut().flatten() {
        g.scale_assign(scale);
    }
    Ok((total / batch.len() as f64, sum))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLine {
    pub step: usize,
    /// Mean training loss since the previous line.
    pub loss: f64,
    pub metric: f64,
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6}\t{:.4}", self.step, self.loss, self.metric)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters at the best evaluation.
    pub best_params: Vec<Tensor<T>>,
    pub best: EvalReport,
    pub optimizer: AdamState<T>,
    pub log: Vec<LogLine>,
    pub steps: usize,
}

/// Mini-batch Adam over `train`, evaluating on `eval`. Shuffling and MLM
/// corruption depend only on `cfg.seed`, so equal seeds give equal logs.
pub fn train<T: Scalar>(
    model: &mut RanModel<T>,
    train: &[TokenizedDocument],
    eval: &[TokenizedDocument],
    cfg: &TrainConfig,
    tags: Option<&TagSet>,
    mut on_log: impl FnMut(&LogLine),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(RanError::config("training set is empty"));
    }
    let mut opt = AdamState::new(&model.params, cfg.lr);
    train_with(model, &mut opt, train, eval, cfg, tags, &mut on_log)
}

/// As [`train`], continuing from an existing optimizer state.
pub fn train_with<T: Scalar>(
    model: &mut RanModel<T>,
    opt: &mut AdamState<T>,
    train: &[TokenizedDocument],
    eval: &[TokenizedDocument],
    cfg: &TrainConfig,
    tags: Option<&TagSet>,
    on_log: &mut dyn FnMut(&LogLine),
) -> Result<TrainOutcome<T>> {
    let kind = MetricKind::for_task(model.config.task);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(EvalReport, Vec<Tensor<T>>)> = None;
    let mut log = Vec::new();
    let (mut step, mut acc_loss, mut acc_n) = (0usize, 0.0, 0usize);
    let mut evaluate_now = |model: &RanModel<T>, step: usize, acc_loss: f64, acc_n: usize| -> Result<()> {
        let data = if eval.is_empty() { train } else { eval };
        let rep = evaluate(model, data, tags, cfg.sequential)?;
        let line = LogLine {
            step,
            loss: acc_loss / acc_n.max(1) as f64,
            metric: rep.metric,
        };
        on_log(&line);
        log.push(line);
        if best.as_ref().is_none_or(|(b, _)| kind.better(rep.metric, b.metric)) {
            best = Some((rep, model.params.tensors().to_vec()));
        }
        Ok(())
    };
    'outer: for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TokenizedDocument> = chunk
                .iter()
                .map(|&i| match model.config.task {
                    Task::Mlm => mlm_mask(&train[i], model.config.vocab_size, cfg.mlm_prob, &mut rng),
                    _ => train[i].clone(),
                })
                .collect();
            let (loss, mut grads) = batch_gradients(model, &batch, cfg.sequential)?;
            if let Some(c) = cfg.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            adam_step(&mut model.params, &grads, opt)?;
            step += 1;
            acc_loss += loss;
            acc_n += 1;
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                evaluate_now(model, step, acc_loss, acc_n)?;
                (acc_loss, acc_n) = (0.0, 0);
            }
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
        }
        if cfg.eval_every == 0 {
            evaluate_now(model, step, acc_loss, acc_n)?;
            (acc_loss, acc_n) = (0.0, 0);
        }
    }
    if acc_n > 0 {
        evaluate_now(model, step, acc_loss, acc_n)?;
    }
    let (best, best_params) = best.ok_or_else(|| RanError::config("no evaluation was run"))?;
    Ok(TrainOutcome {
        best_params,
        best,
        optimizer: opt.clone(),
        log,
        steps: step,
    })
}
