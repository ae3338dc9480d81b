//! Task heads: logits, decoding and perplexity.

use rand::Rng;

use crate::error::{RanError, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Affine output map. `w` is `None` when the LM head is tied to the
/// embedding table, which is then used transposed.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub w: Option<ParamId>,
    pub b: ParamId,
    pub tied: Option<ParamId>,
    pub outputs: usize,
}

impl HeadParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        dim: usize,
        outputs: usize,
        tied: Option<ParamId>,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let w = match tied {
            Some(_) => None,
            None => Some(store.add_normal("head.w", &[dim, outputs], std, rng)),
        };
        HeadParams {
            w,
            b: store.add_full("head.b", &[1, outputs], 0.0),
            tied,
            outputs,
        }
    }
}

fn affine<T: Scalar>(g: &mut Graph<'_, T>, x: Var, p: &HeadParams) -> Result<Var> {
    let b = g.param(p.b);
    let z = match (p.w, p.tied) {
        (Some(w), _) => {
            let w = g.param(w);
            g.matmul(x, w)?
        }
        (None, Some(table)) => {
            let e = g.param(table);
            g.matmul_t(x, e)?
        }
        (None, None) => return Err(RanError::config("head has neither weights nor a tied table")),
    };
    g.add_bias(z, b)
}

/// `1 x D` document vector to `1 x C` logits.
pub fn classify_logits<T: Scalar>(g: &mut Graph<'_, T>, o_clf: Var, p: &HeadParams) -> Result<Var> {
    let z = affine(g, o_clf, p)?;
    if g.value(z).cols() != p.outputs {
        return Err(RanError::config("classify head width mismatch"));
    }
    Ok(z)
}

/// `L x D` to `L x T` per-position tag scores.
pub fn tag_logits<T: Scalar>(g: &mut Graph<'_, T>, o_seq: Var, p: &HeadParams) -> Result<Var> {
    affine(g, o_seq, p)
}

/// `L x D` to `L x V`; row `t` scores the token at `t + 1`.
pub fn lm_logits<T: Scalar>(g: &mut Graph<'_, T>, o_seq: Var, p: &HeadParams) -> Result<Var> {
    affine(g, o_seq, p)
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// BIO tag inventory: `O` plus `B-x`/`I-x` per entity type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    names: Vec<String>,
}

impl TagSet {
    pub fn new(names: Vec<String>) -> Self {
        TagSet { names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    /// Per-position argmax, then every `I-x` that does not continue a
    /// `B-x`/`I-x` run becomes `B-x`.
    pub fn decode<T: Scalar>(&self, logits: &Tensor<T>, len: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..len).map(|r| argmax(logits.row(r))).collect();
        for t in 0..len {
            let name = self.name(out[t]);
            if let Some(ty) = name.strip_prefix("I-") {
                let continues = t > 0 && {
                    let prev = self.name(out[t - 1]);
                    prev.strip_prefix("B-").or_else(|| prev.strip_prefix("I-")) == Some(ty)
                };
                if !continues {
                    if let Some(b) = self.id(&format!("B-{ty}")) {
                        out[t] = b;
                    }
                }
            }
        }
        out
    }
}

/// `exp` of the mean negative log-likelihood.
pub fn perplexity(total_nll: f64, tokens: usize) -> f64 {
    if tokens == 0 {
        return f64::NAN;
    }
    (total_nll / tokens as f64).exp()
}
