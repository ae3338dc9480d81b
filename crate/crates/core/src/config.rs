//! Architecture hyperparameters.

use std::fmt;
use std::str::FromStr;

use crate::attention::MaskKind;
use crate::error::{RanError, Result};
use crate::kv::KvMap;
use crate::rope::DEFAULT_ROTARY_BASE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classify,
    MultiLabel,
    Tag,
    Lm,
    Mlm,
}

impl Task {
    pub fn is_sequence(self) -> bool {
        matches!(self, Task::Tag | Task::Lm | Task::Mlm)
    }
}

impl FromStr for Task {
    type Err = RanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" => Ok(Task::Classify),
            "multilabel" => Ok(Task::MultiLabel),
            "tag" => Ok(Task::Tag),
            "lm" => Ok(Task::Lm),
            "mlm" => Ok(Task::Mlm),
            other => Err(RanError::config(format!("unknown task {other:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classify => "classify",
            Task::MultiLabel => "multilabel",
            Task::Tag => "tag",
            Task::Lm => "lm",
            Task::Mlm => "mlm",
        })
    }
}

/// How GPC states move between stacked layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpcRouting {
    /// Vertical under the full mask, independent otherwise.
    Auto,
    /// Per window, each layer hands its updated GPC to the layer above; the
    /// top layer's GPC is carried to the next window.
    Vertical,
    /// Every layer keeps its own GPC chain across windows.
    Independent,
}

impl FromStr for GpcRouting {
    type Err = RanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(GpcRouting::Auto),
            "vertical" => Ok(GpcRouting::Vertical),
            "independent" => Ok(GpcRouting::Independent),
            other => Err(RanError::config(format!("unknown gpc routing {other:?}"))),
        }
    }
}

impl fmt::Display for GpcRouting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GpcRouting::Auto => "auto",
            GpcRouting::Vertical => "vertical",
            GpcRouting::Independent => "independent",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablations {
    pub avg_pool: bool,
    pub no_residual: bool,
    pub no_memory_review: bool,
    pub no_rotary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub max_len: usize,
    pub window: usize,
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub vocab_size: usize,
    pub task: Task,
    /// Classes, labels or tag types; ignored by the LM tasks.
    pub num_labels: usize,
    pub mask: MaskKind,
    pub prefix_len: usize,
    pub ablations: Ablations,
    pub routing: GpcRouting,
    pub rotate_gpc: bool,
    pub strict_gpc_causal: bool,
    pub learnable_gpc_init: bool,
    pub tie_lm_head: bool,
    /// Add the review output to the window outputs instead of replacing them.
    pub review_residual: bool,
    pub rotary_base: f64,
    pub norm_eps: f64,
    pub init_std: f64,
}

impl ModelConfig {
    /// Defaults for `task`: 2 layers, 12 heads, width 768, window 256 (64
    /// for tagging).
    pub fn new(task: Task, vocab_size: usize, num_labels: usize) -> Self {
        ModelConfig {
            max_len: 512,
            window: if task == Task::Tag { 64 } else { 256 },
            dim: 768,
            heads: 12,
            depth: 2,
            vocab_size,
            task,
            num_labels,
            mask: if task == Task::Lm { MaskKind::Causal } else { MaskKind::Full },
            prefix_len: 0,
            ablations: Ablations::default(),
            routing: GpcRouting::Auto,
            rotate_gpc: false,
            strict_gpc_causal: false,
            learnable_gpc_init: false,
            tie_lm_head: true,
            review_residual: true,
            rotary_base: DEFAULT_ROTARY_BASE,
            norm_eps: 1e-5,
            init_std: 0.02,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn num_windows(&self) -> usize {
        self.max_len.div_ceil(self.window)
    }

    pub fn resolved_routing(&self) -> GpcRouting {
        match (self.routing, self.mask) {
            (GpcRouting::Auto, MaskKind::Full) => GpcRouting::Vertical,
            (GpcRouting::Auto, _) => GpcRouting::Independent,
            (r, _) => r,
        }
    }

    pub fn output_size(&self) -> usize {
        match self.task {
            Task::Lm | Task::Mlm => self.vocab_size,
            _ => self.num_labels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(RanError::config(m));
        if self.max_len == 0 || self.window == 0 {
            return fail("max_len and window must be positive".into());
        }
        if self.window > self.max_len {
            return fail(format!("window {} exceeds max_len {}", self.window, self.max_len));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("{} heads do not divide dim {}", self.heads, self.dim));
        }
        if !self.ablations.no_rotary && self.head_dim() % 2 != 0 {
            return fail(format!("rotary needs an even head dim, got {}", self.head_dim()));
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if self.vocab_size <= crate::data::NUM_RESERVED {
            return fail(format!("vocab_size {} leaves no room past the reserved ids", self.vocab_size));
        }
        match self.task {
            Task::Classify if self.num_labels < 2 => return fail("classify needs at least 2 classes".into()),
            Task::MultiLabel | Task::Tag if self.num_labels < 1 => return fail("num_labels must be positive".into()),
            Task::Lm if self.mask != MaskKind::Causal => return fail("lm requires the causal mask".into()),
            _ => {}
        }
        if self.mask == MaskKind::PrefixCausal && self.prefix_len > self.max_len {
            return fail(format!("prefix_len {} exceeds max_len {}", self.prefix_len, self.max_len));
        }
        if !(self.norm_eps > 0.0) || !(self.init_std > 0.0) || !(self.rotary_base > 1.0) {
            return fail("norm_eps, init_std must be positive and rotary_base > 1".into());
        }
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KvMap) {
        kv.set("max_len", self.max_len);
        kv.set("window", self.window);
        kv.set("dim", self.dim);
        kv.set("heads", self.heads);
        kv.set("depth", self.depth);
        kv.set("vocab_size", self.vocab_size);
        kv.set("task", self.task);
        kv.set("num_labels", self.num_labels);
        kv.set("mask", self.mask);
        kv.set("prefix_len", self.prefix_len);
        kv.set("avg_pool", self.ablations.avg_pool);
        kv.set("no_residual", self.ablations.no_residual);
        kv.set("no_memory_review", self.ablations.no_memory_review);
        kv.set("no_rotary", self.ablations.no_rotary);
        kv.set("gpc_routing", self.routing);
        kv.set("rotate_gpc", self.rotate_gpc);
        kv.set("strict_gpc_causal", self.strict_gpc_causal);
        kv.set("learnable_gpc_init", self.learnable_gpc_init);
        kv.set("tie_lm_head", self.tie_lm_head);
        kv.set("review_residual", self.review_residual);
        // `{:?}` keeps the shortest round-tripping form of an f64.
        kv.set("rotary_base", format!("{:?}", self.rotary_base));
        kv.set("norm_eps", format!("{:?}", self.norm_eps));
        kv.set("init_std", format!("{:?}", self.init_std));
    }

    /// Reads a config; keys that are absent take the task defaults.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let task: Task = kv
            .get("task")
            .ok_or_else(|| RanError::config("missing key task"))?
            .parse()?;
        let vocab_size = kv.get_or("vocab_size", 0usize)?;
        let d = ModelConfig::new(task, vocab_size, kv.get_or("num_labels", 0usize)?);
        let mask = match kv.get("mask") {
            Some(s) => s.parse()?,
            None => d.mask,
        };
        let routing = match kv.get("gpc_routing") {
            Some(s) => s.parse()?,
            None => d.routing,
        };
        let cfg = ModelConfig {
            max_len: kv.get_or("max_len", d.max_len)?,
            window: kv.get_or("window", d.window)?,
            dim: kv.get_or("dim", d.dim)?,
            heads: kv.get_or("heads", d.heads)?,
            depth: kv.get_or("depth", d.depth)?,
            mask,
            prefix_len: kv.get_or("prefix_len", d.prefix_len)?,
            ablations: Ablations {
                avg_pool: kv.get_or("avg_pool", false)?,
                no_residual: kv.get_or("no_residual", false)?,
                no_memory_review: kv.get_or("no_memory_review", false)?,
                no_rotary: kv.get_or("no_rotary", false)?,
            },
            routing,
            rotate_gpc: kv.get_or("rotate_gpc", d.rotate_gpc)?,
            strict_gpc_causal: kv.get_or("strict_gpc_causal", d.strict_gpc_causal)?,
            learnable_gpc_init: kv.get_or("learnable_gpc_init", d.learnable_gpc_init)?,
            tie_lm_head: kv.get_or("tie_lm_head", d.tie_lm_head)?,
            review_residual: kv.get_or("review_residual", d.review_residual)?,
            rotary_base: kv.get_or("rotary_base", d.rotary_base)?,
            norm_eps: kv.get_or("norm_eps", d.norm_eps)?,
            init_std: kv.get_or("init_std", d.init_std)?,
            ..d
        };
        Ok(cfg)
    }
}
