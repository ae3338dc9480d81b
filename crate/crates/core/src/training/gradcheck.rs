use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, Task};
use crate::data::{Label, TokenizedDocument, NUM_RESERVED};
use crate::error::{RanError, Result};
use crate::model::RanModel;
use crate::numerics::{Graph, OpKind};

pub const GRAD_CHECK_STEP: f64 = 1e-5;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub label: String,
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| !(t.rel_err < self.tolerance)).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// `Err` naming every tensor over tolerance.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let names: Vec<String> = self
            .failures()
            .iter()
            .map(|t| format!("{} ({:.3e})", t.name, t.rel_err))
            .collect();
        Err(RanError::GradCheck(format!("{}: {}", self.label, names.join(", "))))
    }
}

/// Below this combined norm a tensor's gradient is indistinguishable from
/// round-off in the central differences.
pub const GRAD_NOISE_FLOOR: f64 = 1e-8;

/// `||a - n|| / (||a|| + ||n||)`, zero when both are negligible.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let (na, nn) = (norm(analytic), norm(numeric));
    if na + nn < GRAD_NOISE_FLOOR {
        0.0
    } else {
        norm(&diff) / (na + nn)
    }
}

fn loss_value(model: &RanModel<f64>, doc: &TokenizedDocument) -> Result<f64> {
    let mut g = Graph::inference(&model.params);
    let (loss, _) = model.loss(&mut g, doc)?;
    Ok(g.value(loss).data()[0])
}

/// Central-difference check of every parameter tensor of `model` on `doc`.
pub fn grad_check(
    model: &RanModel<f64>,
    doc: &TokenizedDocument,
    step: f64,
    tolerance: f64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new(&model.params);
    if let Some(kind) = fault {
        g.inject_fault(kind);
    }
    let (loss, _) = model.loss(&mut g, doc)?;
    let grads = g.backward(loss)?;
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    for id in model.params.ids() {
        let n = model.params.get(id).len();
        let analytic: Vec<f64> = match grads.param(id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; n],
        };
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.params.get(id).data()[j];
            probe.params.get_mut(id).data_mut()[j] = orig + step;
            let up = loss_value(&probe, doc)?;
            probe.params.get_mut(id).data_mut()[j] = orig - step;
            let down = loss_value(&probe, doc)?;
            probe.params.get_mut(id).data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        tensors.push(TensorCheck {
            name: model.params.name(id).to_string(),
            rel_err: relative_error(&analytic, &numeric),
            analytic_norm: norm(&analytic),
            numeric_norm: norm(&numeric),
        });
    }
    Ok(GradCheckReport {
        label: format!(
            "depth={} task={} m={}",
            model.config.depth,
            model.config.task,
            model.config.num_windows()
        ),
        tensors,
        tolerance,
    })
}

/// Tiny configuration for the check: `L = 4m`, `W = 4`, `D = 8`, two heads.
/// The initial GPC is learnable here so that its projection receives a
/// gradient that can be checked.
pub fn tiny_config(depth: usize, task: Task, windows: usize) -> ModelConfig {
    let vocab = NUM_RESERVED + 7;
    let mut cfg = ModelConfig::new(task, vocab, if task == Task::Tag { 5 } else { 3 });
    cfg.max_len = 4 * windows;
    cfg.window = 4;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.depth = depth;
    cfg.init_std = 0.5;
    cfg.learnable_gpc_init = true;
    cfg
}

/// A random document for `cfg`. Document tasks get one pad position.
pub fn tiny_document(cfg: &ModelConfig, seed: u64) -> TokenizedDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cfg.max_len;
    let mut tok = || rng.random_range(NUM_RESERVED..cfg.vocab_size);
    let ids: Vec<usize> = (0..len).map(|_| tok()).collect();
    match cfg.task {
        Task::Classify => {
            let keep = len - 1;
            TokenizedDocument::from_ids(ids[..keep].to_vec(), len, Label::Class(1))
        }
        Task::MultiLabel => TokenizedDocument::from_ids(ids, len, Label::Labels(vec![0, 2])),
        Task::Tag => {
            let keep = len - 1;
            let tags = (0..keep).map(|i| (i * 3 + 1) % cfg.num_labels).collect();
            TokenizedDocument::from_ids(ids[..keep].to_vec(), len, Label::Tags(tags))
        }
        Task::Lm => {
            let next: Vec<usize> = ids[1..].iter().copied().chain([tok()]).collect();
            TokenizedDocument::from_ids(ids, len, Label::Next(next))
        }
        Task::Mlm => {
            let targets = (0..len).map(|i| (i % 3 == 0).then_some(ids[i])).collect();
            TokenizedDocument::from_ids(ids, len, Label::Masked(targets))
        }
    }
}

pub fn grad_check_case(depth: usize, task: Task, windows: usize, seed: u64) -> Result<GradCheckReport> {
    let cfg = tiny_config(depth, task, windows);
    let doc = tiny_document(&cfg, seed);
    let model = RanModel::<f64>::new(cfg, seed)?;
    grad_check(&model, &doc, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE, None)
}

/// `{depth 1, 2} x {classify, tag, lm} x {m 1, 2, 4}`.
pub fn grad_check_matrix(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for depth in [1, 2] {
        for task in [Task::Classify, Task::Tag, Task::Lm] {
            for m in [1, 2, 4] {
                out.push(grad_check_case(depth, task, m, seed)?);
            }
        }
    }
    Ok(out)
}
