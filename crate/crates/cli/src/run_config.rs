//! Flat `key=value` run files: model hyperparameters, data source, training
//! settings and ablation switches in one place.

use std::fs;
use std::path::{Path, PathBuf};

use ran_core::data::TokenMode;
use ran_core::kv::KvMap;
use ran_core::training::TrainConfig;
use ran_core::{DType, ModelConfig, RanError, Result, Task};

/// Keys read by [`ModelConfig::from_kv`].
const MODEL_KEYS: &[&str] = &[
    "task",
    "max_len",
    "window",
    "dim",
    "heads",
    "depth",
    "vocab_size",
    "num_labels",
    "mask",
    "prefix_len",
    "avg_pool",
    "no_residual",
    "no_memory_review",
    "no_rotary",
    "gpc_routing",
    "rotate_gpc",
    "strict_gpc_causal",
    "learnable_gpc_init",
    "tie_lm_head",
    "review_residual",
    "rotary_base",
    "norm_eps",
    "init_std",
];

const RUN_KEYS: &[&str] = &[
    "dtype",
    "data",
    "train_path",
    "eval_path",
    "eval_fraction",
    "token_mode",
    "max_vocab",
    "synth_n",
    "synth_seed",
    "synth_sentence_len",
    "lr",
    "batch_size",
    "epochs",
    "seed",
    "eval_every",
    "clip_norm",
    "max_steps",
    "mlm_prob",
    "deterministic",
    "bench_memory_mb",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    /// `label<TAB>text` lines.
    Tsv,
    /// Token-per-line, tag in the last column.
    Conll,
    /// Plain text stream for language modelling.
    Text,
    SynthLongrange,
    SynthConll,
}

impl std::str::FromStr for DataKind {
    type Err = RanError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tsv" => DataKind::Tsv,
            "conll" => DataKind::Conll,
            "text" => DataKind::Text,
            "synth_longrange" => DataKind::SynthLongrange,
            "synth_conll" => DataKind::SynthConll,
            other => return Err(RanError::config(format!("unknown data kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    /// Share of the data held out when no eval file is given.
    pub eval_fraction: f64,
    pub token_mode: TokenMode,
    /// Vocabulary cap including reserved entries.
    pub max_vocab: usize,
    pub synth_n: usize,
    pub synth_seed: u64,
    pub synth_sentence_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Vocabulary size and label count are filled in once data is loaded.
    pub model: ModelConfig,
    pub dtype: DType,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub bench_memory_mb: usize,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| RanError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Relative data paths are taken from the config file's directory.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.train_path, &mut cfg.data.eval_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KvMap::parse(text)?)
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !MODEL_KEYS.contains(k) && !RUN_KEYS.contains(k)) {
            return Err(RanError::config(format!("unknown config key {k:?}")));
        }
        let model = ModelConfig::from_kv(kv)?;
        let dtype = match kv.get("dtype").unwrap_or("f32") {
            "f32" => DType::F32,
            "f64" => DType::F64,
            other => return Err(RanError::config(format!("unknown dtype {other:?}"))),
        };
        let default_kind = match model.task {
            Task::Classify | Task::MultiLabel => DataKind::Tsv,
            Task::Tag => DataKind::Conll,
            Task::Lm | Task::Mlm => DataKind::Text,
        };
        let kind = match kv.get("data") {
            Some(s) => s.parse()?,
            None => default_kind,
        };
        let default_mode = match model.task {
            Task::Lm | Task::Mlm => TokenMode::Char,
            _ => TokenMode::Word,
        };
        let token_mode = match kv.get("token_mode") {
            Some(s) => s.parse()?,
            None => default_mode,
        };
        let data = DataConfig {
            kind,
            train_path: kv.get("train_path").map(PathBuf::from),
            eval_path: kv.get("eval_path").map(PathBuf::from),
            eval_fraction: kv.get_or("eval_fraction", 0.1)?,
            token_mode,
            max_vocab: kv.get_or("max_vocab", 30_000usize)?,
            synth_n: kv.get_or("synth_n", 1000usize)?,
            synth_seed: kv.get_or("synth_seed", 0u64)?,
            synth_sentence_len: kv.get_or("synth_sentence_len", 24usize)?,
        };
        let d = TrainConfig::default();
        let train = TrainConfig {
            lr: kv.get_or("lr", d.lr)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            epochs: kv.get_or("epochs", d.epochs)?,
            seed: kv.get_or("seed", d.seed)?,
            eval_every: kv.get_or("eval_every", d.eval_every)?,
            clip_norm: kv.get_opt("clip_norm")?,
            max_steps: kv.get_opt("max_steps")?,
            sequential: kv.get_or("deterministic", d.sequential)?,
            mlm_prob: kv.get_or("mlm_prob", d.mlm_prob)?,
        };
        let cfg = RunConfig {
            model,
            dtype,
            data,
            train,
            bench_memory_mb: kv.get_or("bench_memory_mb", 1024usize)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every check that does not need the data: the model invariants are
    /// tested against placeholder vocabulary and label sizes.
    pub fn validate(&self) -> Result<()> {
        let mut probe = self.model.clone();
        probe.vocab_size = probe.vocab_size.max(ran_core::data::NUM_RESERVED + 1);
        probe.num_labels = probe.num_labels.max(2);
        probe.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if !(0.0..1.0).contains(&d.eval_fraction) {
            return Err(RanError::config("eval_fraction must lie in [0, 1)"));
        }
        if d.max_vocab <= ran_core::data::NUM_RESERVED {
            return Err(RanError::config("max_vocab must exceed the reserved entries"));
        }
        let file_backed = matches!(d.kind, DataKind::Tsv | DataKind::Conll | DataKind::Text);
        if file_backed && d.train_path.is_none() {
            return Err(RanError::config("train_path is required for file data"));
        }
        let task_ok = match d.kind {
            DataKind::Tsv | DataKind::SynthLongrange => {
                matches!(self.model.task, Task::Classify | Task::MultiLabel)
            }
            DataKind::Conll | DataKind::SynthConll => self.model.task == Task::Tag,
            DataKind::Text => matches!(self.model.task, Task::Lm | Task::Mlm),
        };
        if !task_ok {
            return Err(RanError::config(format!(
                "data kind {:?} does not fit task {}",
                d.kind, self.model.task
            )));
        }
        if d.kind == DataKind::SynthLongrange && self.model.task != Task::Classify {
            return Err(RanError::config("synth_longrange is a single-label task"));
        }
        if d.synth_n == 0 && matches!(d.kind, DataKind::SynthLongrange | DataKind::SynthConll) {
            return Err(RanError::config("synth_n must be positive"));
        }
        Ok(())
    }

    /// Force deterministic (sequential) kernels, as `RAN_DETERMINISTIC=1` does.
    pub fn apply_env(&mut self) {
        if std::env::var("RAN_DETERMINISTIC").is_ok_and(|v| v == "1") {
            self.train.sequential = true;
        }
    }
}
