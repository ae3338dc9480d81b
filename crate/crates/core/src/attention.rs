//! Positional multi-head self-attention over `[GPC; window]` blocks and the
//! un-rotated cross-attention used by memory review.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{RanError, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::rope::RotaryTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Full,
    Causal,
    PrefixCausal,
}

impl FromStr for MaskKind {
    type Err = RanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(MaskKind::Full),
            "causal" => Ok(MaskKind::Causal),
            "prefix-causal" | "prefix_causal" => Ok(MaskKind::PrefixCausal),
            other => Err(RanError::config(format!("unknown mask kind {other:?}"))),
        }
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Full => "full",
            MaskKind::Causal => "causal",
            MaskKind::PrefixCausal => "prefix-causal",
        })
    }
}

/// Additive `(1+W) x (1+W)` mask for one window. Row and column 0 are the
/// GPC slot.
#[derive(Debug, Clone)]
pub struct MaskSpec<T> {
    pub kind: MaskKind,
    pub prefix_len: usize,
    pub matrix: Tensor<T>,
}

impl<T: Scalar> MaskSpec<T> {
    pub fn is_visible(&self, row: usize, col: usize) -> bool {
        self.matrix.get(row, col).is_finite()
    }
}

/// Where a window sits in the document and which of its slots hold real
/// tokens.
#[derive(Debug, Clone, Copy)]
pub struct WindowLayout<'a> {
    pub valid: &'a [bool],
    /// Document position of the window's first token.
    pub offset: usize,
    pub prefix_len: usize,
    /// Restrict the GPC query row to itself under causal masks.
    pub strict_gpc: bool,
}

impl<'a> WindowLayout<'a> {
    pub fn dense(valid: &'a [bool]) -> Self {
        WindowLayout {
            valid,
            offset: 0,
            prefix_len: 0,
            strict_gpc: false,
        }
    }
}

pub fn build_mask<T: Scalar>(kind: MaskKind, window: usize, layout: WindowLayout<'_>) -> Result<MaskSpec<T>> {
    if layout.valid.len() != window {
        return Err(RanError::dim(format!(
            "mask: {} validity flags for window {window}",
            layout.valid.len()
        )));
    }
    let n = window + 1;
    let neg = T::neg_infinity();
    let mut m = Tensor::zeros(&[n, n]);
    for r in 0..n {
        for c in 1..n {
            let tok = c - 1;
            let visible = layout.valid[tok]
                && match (kind, r) {
                    (MaskKind::Full, _) => true,
                    (_, 0) => !layout.strict_gpc,
                    (MaskKind::Causal, r) => tok <= r - 1,
                    (MaskKind::PrefixCausal, r) => {
                        let q = layout.offset + r - 1;
                        let p = layout.offset + tok;
                        p <= q || p < layout.prefix_len
                    }
                };
            if !visible {
                m.set(r, c, neg);
            }
        }
    }
    Ok(MaskSpec {
        kind,
        prefix_len: layout.prefix_len,
        matrix: m,
    })
}

/// Query/key/value projections (each `D x D`, all heads side by side) and an
/// optional output projection.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub out: Option<(ParamId, ParamId)>,
}

impl AttentionParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        with_output: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut w = |n: &str| store.add_normal(&format!("{prefix}.{n}"), &[dim, dim], std, rng);
        let (wq, wk, wv) = (w("wq"), w("wk"), w("wv"));
        let wo = with_output.then(|| w("wo"));
        let mut b = |n: &str| store.add_full(&format!("{prefix}.{n}"), &[1, dim], 0.0);
        AttentionParams {
            wq,
            bq: b("bq"),
            wk,
            bk: b("bk"),
            wv,
            bv: b("bv"),
            out: wo.map(|wo| (wo, b("bo"))),
        }
    }
}

fn project<T: Scalar>(g: &mut Graph<'_, T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (w, b) = (g.param(w), g.param(b));
    g.linear(x, w, b)
}

/// Rotary settings for one pMHSA call: one optional position per input row.
pub struct Positions<'a, T> {
    pub table: &'a RotaryTable<T>,
    pub rows: &'a [Option<usize>],
}

/// `pMHSA(X) = W[Att_1(X); ...; Att_h(X)] + b`, rotary on queries and keys.
pub fn pmhsa<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    p: &AttentionParams,
    mask: &MaskSpec<T>,
    heads: usize,
    rotary: Option<Positions<'_, T>>,
) -> Result<Var> {
    let n = g.value(x).rows();
    if mask.matrix.rows() != n || mask.matrix.cols() != n {
        return Err(RanError::dim(format!(
            "pmhsa: mask is {}x{}, input has {n} rows",
            mask.matrix.rows(),
            mask.matrix.cols()
        )));
    }
    let mut q = project(g, x, p.wq, p.bq)?;
    let mut k = project(g, x, p.wk, p.bk)?;
    let v = project(g, x, p.wv, p.bv)?;
    if let Some(rp) = rotary {
        if rp.rows.len() != n {
            return Err(RanError::dim("pmhsa: one rotary position per row"));
        }
        q = rp.table.apply(g, q, rp.rows)?;
        k = rp.table.apply(g, k, rp.rows)?;
    }
    let att = g.attention(q, k, v, &mask.matrix, heads)?;
    match p.out {
        Some((w, b)) => project(g, att, w, b),
        None => Ok(att),
    }
}

/// Single-head `SoftMax(QK^T/sqrt(D))V` with queries from `queries` and
/// keys/values from `keys_values`.
pub fn cross_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    queries: Var,
    keys_values: Var,
    p: &AttentionParams,
    mask: &Tensor<T>,
) -> Result<Var> {
    let q = project(g, queries, p.wq, p.bq)?;
    let k = project(g, keys_values, p.wk, p.bk)?;
    let v = project(g, keys_values, p.wv, p.bv)?;
    g.attention(q, k, v, mask, 1)
}
