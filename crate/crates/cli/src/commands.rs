//! The `ran` subcommands as library functions. Each writes its report to the
//! given sink and returns the structured result for callers and tests.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ran_core::data::{encode, tokenize, Label, TokenMode, TokenizedDocument, NUM_RESERVED};
use ran_core::heads::{argmax, TagSet};
use ran_core::numerics::Graph;
use ran_core::training::{
    adam_step, batch_gradients, evaluate, grad_check_matrix, train, AdamState, EvalReport, GradCheckReport, LogLine,
};
use ran_core::{DType, RanError, RanModel, Result, Scalar, Task};

use crate::checkpoint::{peek_dtype, Checkpoint};
use crate::dataset::{load_eval_file, prepare, Prepared};
use crate::run_config::{DataKind, RunConfig};

fn emit(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(line)?;
    out.write_all(b"\n")?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub log: Vec<LogLine>,
    pub best: EvalReport,
    pub steps: usize,
    pub num_parameters: usize,
}

/// Train from a run config, printing `step\tloss\tmetric` lines. The
/// checkpoint holds the best-scoring parameters and the final optimizer
/// state.
pub fn cmd_train(cfg: &RunConfig, ckpt: Option<&Path>, out: &mut dyn Write) -> Result<TrainSummary> {
    let data = prepare(cfg)?;
    match cfg.dtype {
        DType::F32 => train_typed::<f32>(cfg, &data, ckpt, out),
        DType::F64 => train_typed::<f64>(cfg, &data, ckpt, out),
    }
}

/// A fresh model sized to the prepared data.
pub fn build_model<T: Scalar>(cfg: &RunConfig, data: &Prepared) -> Result<RanModel<T>> {
    let mut m = cfg.model.clone();
    m.vocab_size = data.vocab.len();
    if !matches!(m.task, Task::Lm | Task::Mlm) {
        m.num_labels = data.labels.len();
    }
    m.validate()?;
    RanModel::new(m, cfg.train.seed)
}

fn tag_set(task: Task, labels: &[String]) -> Option<TagSet> {
    (task == Task::Tag).then(|| TagSet::new(labels.to_vec()))
}

fn train_typed<T: Scalar>(cfg: &RunConfig, data: &Prepared, ckpt: Option<&Path>, out: &mut dyn Write) -> Result<TrainSummary> {
    let mut model = build_model::<T>(cfg, data)?;
    let tags = tag_set(model.config.task, &data.labels);
    let mut write_err = None;
    let outcome = train(&mut model, &data.train, &data.eval, &cfg.train, tags.as_ref(), |l| {
        if let Err(e) = emit(out, format_args!("{l}")) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    model.params.replace_all(outcome.best_params)?;
    if let Some(path) = ckpt {
        Checkpoint::from_model(&model, &data.vocab, &data.labels, Some(&outcome.optimizer)).save(path)?;
    }
    Ok(TrainSummary {
        log: outcome.log,
        best: outcome.best,
        steps: outcome.steps,
        num_parameters: model.num_parameters(),
    })
}

/// Load a checkpoint of either element type and run `f` on it.
macro_rules! with_checkpoint {
    ($path:expr, |$ck:ident| $body:expr) => {{
        let bytes = std::fs::read($path)?;
        match peek_dtype(&bytes)? {
            DType::F32 => {
                let $ck = Checkpoint::<f32>::from_bytes(&bytes)?;
                $body
            }
            DType::F64 => {
                let $ck = Checkpoint::<f64>::from_bytes(&bytes)?;
                $body
            }
        }
    }};
}

/// Score `data` with a saved model and print the task metric and loss.
pub fn cmd_eval(ckpt: &Path, data: &Path, sequential: bool, out: &mut dyn Write) -> Result<EvalReport> {
    let report = with_checkpoint!(ckpt, |ck| eval_checkpoint(&ck, data, sequential)?);
    emit(out, format_args!("{}\t{:.4}", report.kind.name(), report.metric))?;
    emit(out, format_args!("loss\t{:.6}", report.loss))?;
    Ok(report)
}

pub fn eval_checkpoint<T: Scalar>(ck: &Checkpoint<T>, data: &Path, sequential: bool) -> Result<EvalReport> {
    let model = ck.model()?;
    let cfg = &model.config;
    let docs = load_eval_file(data, cfg.task, &ck.vocab, &ck.labels, cfg.max_len)?;
    evaluate(&model, &docs, tag_set(cfg.task, &ck.labels).as_ref(), sequential)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    /// Tokens to generate for language models.
    pub tokens: usize,
    /// Draw from the softmax instead of taking the argmax.
    pub sample: bool,
    pub seed: u64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            tokens: 64,
            sample: false,
            seed: 0,
        }
    }
}

/// Label, BIO tags (`token\ttag` lines) or a generated continuation.
pub fn cmd_predict(ckpt: &Path, input: &str, opts: PredictOptions, out: &mut dyn Write) -> Result<String> {
    if input.trim().is_empty() {
        return Err(RanError::config("predict needs non-empty input"));
    }
    let text = with_checkpoint!(ckpt, |ck| predict_checkpoint(&ck, input, opts)?);
    out.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        out.write_all(b"\n")?;
    }
    Ok(text)
}

pub fn predict_checkpoint<T: Scalar>(ck: &Checkpoint<T>, input: &str, opts: PredictOptions) -> Result<String> {
    let model = ck.model()?;
    let cfg = &model.config;
    match cfg.task {
        Task::Classify => {
            let logits = model.logits(&encode(input, &ck.vocab, cfg.max_len))?;
            Ok(ck.labels[argmax(logits.row(0))].clone())
        }
        Task::MultiLabel => {
            let logits = model.logits(&encode(input, &ck.vocab, cfg.max_len))?;
            let on: Vec<&str> = (0..ck.labels.len())
                .filter(|&i| logits.row(0)[i] > T::zero())
                .map(|i| ck.labels[i].as_str())
                .collect();
            Ok(on.join(","))
        }
        Task::Tag => {
            let words = tokenize(input, TokenMode::Word);
            let doc = encode(input, &ck.vocab, cfg.max_len);
            let tags = TagSet::new(ck.labels.clone());
            let pred = tags.decode(&model.logits(&doc)?, doc.true_length);
            Ok(words
                .iter()
                .zip(pred)
                .map(|(w, t)| format!("{w}\t{}\n", tags.name(t)))
                .collect())
        }
        Task::Lm => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut ids = ck.vocab.ids(input);
            let start = ids.len();
            for _ in 0..opts.tokens {
                let ctx = ids[ids.len().saturating_sub(cfg.max_len)..].to_vec();
                let last = ctx.len() - 1;
                let logits = model.logits(&TokenizedDocument::from_ids(ctx, cfg.max_len, Label::None))?;
                // Reserved ids (padding, unknown, markers) are never emitted.
                let row: Vec<f64> = logits
                    .row(last)
                    .iter()
                    .enumerate()
                    .map(|(i, x)| if i < NUM_RESERVED { f64::NEG_INFINITY } else { x.to_f64().unwrap_or(f64::NAN) })
                    .collect();
                ids.push(if opts.sample { sample(&row, &mut rng) } else { argmax(&row) });
            }
            Ok(ck.vocab.decode(&ids[start..]))
        }
        Task::Mlm => Err(RanError::config("predict does not support the mlm task")),
    }
}

fn sample(logits: &[f64], rng: &mut impl Rng) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, x) in w.iter().enumerate() {
        u -= x;
        if u <= 0.0 {
            return i;
        }
    }
    w.len() - 1
}

/// Finite-difference check over depth x task x window count. Returns whether
/// every case passed.
pub fn cmd_grad_check(seed: u64, out: &mut dyn Write) -> Result<(bool, Vec<GradCheckReport>)> {
    let reports = grad_check_matrix(seed)?;
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAILED" };
        emit(out, format_args!("{}\tmax_rel_err={:.3e}\t{status}", r.label, r.max_rel_err()))?;
        for f in r.failures() {
            emit(out, format_args!("  {}\trel_err={:.3e}", f.name, f.rel_err))?;
        }
    }
    let ok = reports.iter().all(GradCheckReport::passed);
    Ok((ok, reports))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub window: usize,
    pub seconds_per_epoch: f64,
    /// Test accuracy in percent after the last epoch.
    pub accuracy: f64,
    /// Documents per batch that fit in the memory budget, from the size of
    /// one document's recorded tape (values plus an equal amount of
    /// gradient storage).
    pub max_batch: usize,
}

pub const BENCH_HEADER: &str = "window,seconds_per_epoch,accuracy,max_batch";

impl std::fmt::Display for BenchRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{:.6},{:.4},{}", self.window, self.seconds_per_epoch, self.accuracy, self.max_batch)
    }
}

/// Window-size sweep on synth_longrange. Every window trains the same
/// number of epochs from the same seed; batch items are processed one after
/// another so timings are single-threaded.
pub fn cmd_bench(cfg: &RunConfig, windows: &[usize], out: &mut dyn Write) -> Result<Vec<BenchRow>> {
    if windows.is_empty() {
        return Err(RanError::config("bench needs at least one window size"));
    }
    if let Some(&w) = windows.iter().find(|&&w| w == 0 || w > cfg.model.max_len) {
        return Err(RanError::config(format!("window {w} must lie in 1..={}", cfg.model.max_len)));
    }
    if cfg.model.task != Task::Classify {
        return Err(RanError::config("bench runs the classify task"));
    }
    emit(out, format_args!("{BENCH_HEADER}"))?;
    let mut rows = Vec::with_capacity(windows.len());
    for &w in windows {
        let mut c = cfg.clone();
        c.model.window = w;
        c.data.kind = DataKind::SynthLongrange;
        let row = match c.dtype {
            DType::F32 => bench_window::<f32>(&c)?,
            DType::F64 => bench_window::<f64>(&c)?,
        };
        emit(out, format_args!("{row}"))?;
        rows.push(row);
    }
    Ok(rows)
}

fn bench_window<T: Scalar>(cfg: &RunConfig) -> Result<BenchRow> {
    let data = prepare(cfg)?;
    let mut model = build_model::<T>(cfg, &data)?;
    let per_doc = {
        let mut g = Graph::new(&model.params);
        model.loss(&mut g, &data.train[0])?;
        2 * g.stored_elements() * T::DTYPE.size()
    };
    let budget = cfg.bench_memory_mb * 1024 * 1024;
    let mut opt = AdamState::new(&model.params, cfg.train.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let epochs = cfg.train.epochs.max(1);
    let mut seconds = 0.0;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let start = Instant::now();
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch: Vec<TokenizedDocument> = chunk.iter().map(|&i| data.train[i].clone()).collect();
            let (_, grads) = batch_gradients(&model, &batch, true)?;
            adam_step(&mut model.params, &grads, &mut opt)?;
        }
        seconds += start.elapsed().as_secs_f64();
    }
    let test = if data.eval.is_empty() { &data.train } else { &data.eval };
    let report = evaluate(&model, test, None, true)?;
    Ok(BenchRow {
        window: cfg.model.window,
        seconds_per_epoch: seconds / epochs as f64,
        accuracy: report.metric,
        max_batch: budget / per_doc.max(1),
    })
}

/// Parse `8,32,128` into window sizes.
pub fn parse_windows(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| RanError::config(format!("bad window size {w:?}")))
        })
        .collect()
}

/// Process exit status for an error: 2 for configuration and usage
/// problems, 3 for bad data, 1 otherwise.
pub fn exit_code(e: &RanError) -> i32 {
    match e {
        RanError::Config(_) | RanError::Precondition(_) => 2,
        RanError::Data { .. } => 3,
        _ => 1,
    }
}
