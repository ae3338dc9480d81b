//! Window concatenation, the bank of updated GPC states, review
//! cross-attention and the classification representation.

use rand::Rng;

use crate::attention::{cross_attention, AttentionParams};
use crate::error::{RanError, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// `S = [G_1; ...; G_m]` plus the initial state, which serves as the
/// sentinel key for the first window under causal review.
#[derive(Debug, Clone, Copy)]
pub struct MemoryBank {
    /// `m x D`.
    pub states: Var,
    /// `1 x D`.
    pub initial: Var,
    pub len: usize,
}

impl MemoryBank {
    pub fn from_states<T: Scalar>(g: &mut Graph<'_, T>, initial: Var, states: &[Var]) -> Result<Self> {
        if states.is_empty() {
            return Err(RanError::State("memory bank needs at least one state".into()));
        }
        Ok(MemoryBank {
            states: g.concat_rows(states)?,
            initial,
            len: states.len(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierParams {
    pub w_g: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

impl ClassifierParams {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, dim: usize, std: f64, rng: &mut R) -> Self {
        ClassifierParams {
            w_g: store.add_normal("clf.w_g", &[dim, dim], std, rng),
            w_o: store.add_normal("clf.w_o", &[dim, dim], std, rng),
            b_o: store.add_full("clf.b_o", &[1, dim], 0.0),
        }
    }
}

/// `O^w = [O^w_1; ...; O^w_m]`, trimmed to `len` rows.
pub fn concat_windows<T: Scalar>(g: &mut Graph<'_, T>, per_window: &[Var], len: usize) -> Result<Var> {
    let cat = g.concat_rows(per_window)?;
    if g.value(cat).rows() == len {
        Ok(cat)
    } else {
        g.slice_rows(cat, 0, len)
    }
}

/// Additive review mask. Without causality every row sees all `m` states.
/// With it, the bank is `[G_0; G_1..G_m]` and a row in window `i` (0-based)
/// sees `G_1..G_i`, or only `G_0` when `i == 0`.
pub fn review_mask<T: Scalar>(len: usize, window: usize, bank_len: usize, causal: bool) -> Tensor<T> {
    if !causal {
        return Tensor::zeros(&[len, bank_len]);
    }
    let mut m = Tensor::full(&[len, bank_len + 1], T::neg_infinity());
    for t in 0..len {
        let i = t / window;
        if i == 0 {
            m.set(t, 0, T::zero());
        } else {
            for j in 1..=i.min(bank_len) {
                m.set(t, j, T::zero());
            }
        }
    }
    m
}

/// `SoftMax(Q K^T / sqrt(D)) V` with `Q` from `ow` and `K`, `V` from the bank.
pub fn review<T: Scalar>(
    g: &mut Graph<'_, T>,
    ow: Var,
    bank: &MemoryBank,
    p: &AttentionParams,
    window: usize,
    causal: bool,
) -> Result<Var> {
    if bank.len == 0 {
        return Err(RanError::State("review over an empty bank".into()));
    }
    let len = g.value(ow).rows();
    let mask = review_mask(len, window, bank.len, causal);
    let kv = if causal {
        g.concat_rows(&[bank.initial, bank.states])?
    } else {
        bank.states
    };
    cross_attention(g, ow, kv, p, &mask)
}

/// Sequence output. `review` is `None` for the no-review ablation, in which
/// case the window outputs pass through unchanged.
pub fn sequence_output<T: Scalar>(
    g: &mut Graph<'_, T>,
    ow: Var,
    bank: &MemoryBank,
    review_params: Option<&AttentionParams>,
    window: usize,
    causal: bool,
    residual: bool,
) -> Result<Var> {
    match review_params {
        None => Ok(ow),
        Some(p) => {
            let r = review(g, ow, bank, p, window, causal)?;
            if residual {
                g.add(ow, r)
            } else {
                Ok(r)
            }
        }
    }
}

/// `O_clf = W^g G_m + W^o Pool(O) + b^o`, max pooling unless `avg_pool`.
pub fn classification_output<T: Scalar>(
    g: &mut Graph<'_, T>,
    last: Var,
    o: Var,
    p: &ClassifierParams,
    valid: &[bool],
    avg_pool: bool,
) -> Result<Var> {
    let pooled = if avg_pool {
        g.mean_pool(o, valid)?
    } else {
        g.max_pool(o, valid)?
    };
    let wg = g.param(p.w_g);
    let wo = g.param(p.w_o);
    let a = g.matmul(last, wg)?;
    let b = g.matmul(pooled, wo)?;
    let s = g.add(a, b)?;
    let bias = g.param(p.b_o);
    g.add_bias(s, bias)
}
