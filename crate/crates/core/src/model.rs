//! The full encoder with its task head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionParams, MaskKind};
use crate::config::{ModelConfig, Task};
use crate::data::{Label, TokenizedDocument};
use crate::error::{RanError, Result};
use crate::heads::{classify_logits, lm_logits, tag_logits, HeadParams};
use crate::memory_review::{classification_output, concat_windows, sequence_output, ClassifierParams, MemoryBank};
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::recurrence::{run_stack, EncoderParams, StackOutput};
use crate::rope::RotaryTable;

#[derive(Debug, Clone)]
pub struct RanParams {
    pub embed: ParamId,
    pub encoder: EncoderParams,
    /// Absent under the no-review ablation.
    pub review: Option<AttentionParams>,
    pub classifier: Option<ClassifierParams>,
    pub head: HeadParams,
}

pub struct Forward {
    pub stack: StackOutput,
    /// `O^w`, `L x D`.
    pub windows: Var,
    pub bank: MemoryBank,
    /// `O_seq`, `L x D`.
    pub seq: Var,
    /// `O_clf` for the document tasks.
    pub clf: Option<Var>,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct RanModel<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub ids: RanParams,
    rotary: Option<RotaryTable<T>>,
}

impl<T: Scalar> RanModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (d, std) = (config.dim, config.init_std);
        let embed = store.add_normal("embed", &[config.vocab_size, d], std, &mut rng);
        let encoder = EncoderParams::register(&mut store, &config, &mut rng);
        let review = (!config.ablations.no_memory_review)
            .then(|| AttentionParams::register(&mut store, "review", d, false, std, &mut rng));
        let classifier = (!config.task.is_sequence()).then(|| ClassifierParams::register(&mut store, d, std, &mut rng));
        let tied = (matches!(config.task, Task::Lm | Task::Mlm) && config.tie_lm_head).then_some(embed);
        let head = HeadParams::register(&mut store, d, config.output_size(), tied, std, &mut rng);
        let rotary = if config.ablations.no_rotary {
            None
        } else {
            Some(RotaryTable::new(config.head_dim(), config.window + 1, config.rotary_base)?)
        };
        Ok(RanModel {
            config,
            params: store,
            ids: RanParams {
                embed,
                encoder,
                review,
                classifier,
                head,
            },
            rotary,
        })
    }

    /// Rebuild a model around saved tensors, matched by name and shape.
    pub fn with_params(config: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if tensors.len() != model.params.len() {
            return Err(RanError::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| RanError::Checkpoint(format!("unexpected parameter {name}")))?;
            if model.params.get(id).shape() != t.shape() {
                return Err(RanError::Checkpoint(format!("shape mismatch for {name}")));
            }
            *model.params.get_mut(id) = t;
        }
        Ok(model)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, ids: &[usize], valid: &[bool]) -> Result<Forward> {
        let cfg = &self.config;
        if ids.is_empty() || ids.len() > cfg.max_len || valid.len() != ids.len() {
            return Err(RanError::dim(format!(
                "forward: {} ids / {} flags for max_len {}",
                ids.len(),
                valid.len(),
                cfg.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
            return Err(RanError::dim(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        let table = g.param(self.ids.embed);
        let x = g.embedding(table, ids)?;
        let x = g.mask_rows(x, valid)?;
        let stack = run_stack(g, x, valid, cfg, &self.ids.encoder, self.rotary.as_ref())?;
        let windows = concat_windows(g, &stack.windows, ids.len())?;
        let states: Vec<Var> = stack.history.iter().map(|s| s.value).collect();
        let bank = MemoryBank::from_states(g, stack.initial.value, &states)?;
        let causal = cfg.mask != MaskKind::Full;
        let seq = sequence_output(
            g,
            windows,
            &bank,
            self.ids.review.as_ref(),
            cfg.window,
            causal,
            cfg.review_residual,
        )?;
        let (clf, logits) = match cfg.task {
            Task::Classify | Task::MultiLabel => {
                let p = self.ids.classifier.as_ref().expect("document task has a classifier");
                let last = *states.last().expect("non-empty bank");
                let o = classification_output(g, last, seq, p, valid, cfg.ablations.avg_pool)?;
                (Some(o), classify_logits(g, o, &self.ids.head)?)
            }
            Task::Tag => (None, tag_logits(g, seq, &self.ids.head)?),
            Task::Lm | Task::Mlm => (None, lm_logits(g, seq, &self.ids.head)?),
        };
        Ok(Forward {
            stack,
            windows,
            bank,
            seq,
            clf,
            logits,
        })
    }

    /// Forward plus the task loss for one document.
    pub fn loss(&self, g: &mut Graph<'_, T>, doc: &TokenizedDocument) -> Result<(Var, Forward)> {
        let valid = doc.valid();
        let f = self.forward(g, &doc.ids, &valid)?;
        let n = doc.ids.len();
        let per_row = |targets: &[usize]| -> Vec<Option<usize>> {
            (0..n).map(|t| if t < doc.true_length { targets.get(t).copied() } else { None }).collect()
        };
        let loss = match (&doc.label, self.config.task) {
            (Label::Class(c), Task::Classify) => g.cross_entropy(f.logits, &[Some(*c)])?,
            (Label::Labels(ls), Task::MultiLabel) => {
                let mut t = vec![T::zero(); self.config.num_labels];
                for &l in ls {
                    *t.get_mut(l).ok_or_else(|| RanError::config(format!("label {l} out of range")))? = T::one();
                }
                g.bce_with_logits(f.logits, &t)?
            }
            (Label::Tags(tags), Task::Tag) => g.cross_entropy(f.logits, &per_row(tags))?,
            (Label::Next(next), Task::Lm) => g.cross_entropy(f.logits, &per_row(next))?,
            (Label::Masked(m), Task::Mlm) => {
                let rows: Vec<Option<usize>> = (0..n).map(|t| m.get(t).copied().flatten()).collect();
                g.cross_entropy(f.logits, &rows)?
            }
            (label, task) => {
                return Err(RanError::config(format!("label {label:?} does not fit task {task}")));
            }
        };
        Ok((loss, f))
    }

    /// Logits of one document without recording a tape.
    pub fn logits(&self, doc: &TokenizedDocument) -> Result<Tensor<T>> {
        let mut g = Graph::inference(&self.params);
        let f = self.forward(&mut g, &doc.ids, &doc.valid())?;
        Ok(g.value(f.logits).clone())
    }
}
