//! The recurrent layer: windows are encoded one after another with the GPC
//! state prepended, and the state is updated by a residual LayerNorm.

use rand::Rng;

use crate::attention::{build_mask, pmhsa, AttentionParams, MaskKind, Positions, WindowLayout};
use crate::config::{GpcRouting, ModelConfig};
use crate::error::{RanError, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::rope::RotaryTable;

/// `G0 = LayerNorm(W_g g0)` with `g0` fixed at zero unless learnable.
#[derive(Debug, Clone, Copy)]
pub struct GpcInitParams {
    pub g0: Option<ParamId>,
    pub w_g: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl GpcInitParams {
    pub fn register<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        dim: usize,
        learnable: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let g0 = learnable.then(|| store.add_normal("gpc.g0", &[1, dim], std, rng));
        GpcInitParams {
            g0,
            w_g: store.add_normal("gpc.w_g", &[dim, dim], std, rng),
            gamma: store.add_full("gpc.ln.gamma", &[1, dim], 1.0),
            beta: store.add_full("gpc.ln.beta", &[1, dim], 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerParams {
    pub in_gamma: ParamId,
    pub in_beta: ParamId,
    pub attn: AttentionParams,
    pub gpc_gamma: ParamId,
    pub gpc_beta: ParamId,
}

impl LayerParams {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, index: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let p = format!("layer{index}");
        LayerParams {
            in_gamma: store.add_full(&format!("{p}.in_ln.gamma"), &[1, dim], 1.0),
            in_beta: store.add_full(&format!("{p}.in_ln.beta"), &[1, dim], 0.0),
            attn: AttentionParams::register(store, &format!("{p}.attn"), dim, true, std, rng),
            gpc_gamma: store.add_full(&format!("{p}.gpc_ln.gamma"), &[1, dim], 1.0),
            gpc_beta: store.add_full(&format!("{p}.gpc_ln.beta"), &[1, dim], 0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub init: GpcInitParams,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn register<T: Scalar, R: Rng>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut R) -> Self {
        let init = GpcInitParams::register(store, cfg.dim, cfg.learnable_gpc_init, cfg.init_std, rng);
        let layers = (0..cfg.depth)
            .map(|i| LayerParams::register(store, i, cfg.dim, cfg.init_std, rng))
            .collect();
        EncoderParams { init, layers }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GpcState {
    /// `1 x D`.
    pub value: Var,
    /// 0 for the initial state, `i` after window `i` (1-based).
    pub window_index: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct WindowOutput {
    /// `G'_i`, `1 x D`.
    pub gpc_prime: Var,
    /// `O^w_i`, `W x D`, pad rows zero.
    pub tokens: Var,
}

/// One window of a chunked sequence.
#[derive(Debug, Clone)]
pub struct Window {
    pub tokens: Var,
    pub valid: Vec<bool>,
    /// Sequence position of the first row.
    pub offset: usize,
}

/// Split an `L x D` sequence into `ceil(L/W)` windows, right-padding the
/// last one with zero rows.
pub fn chunk<T: Scalar>(g: &mut Graph<'_, T>, x: Var, valid: &[bool], window: usize) -> Result<Vec<Window>> {
    let (len, dim) = (g.value(x).rows(), g.value(x).cols());
    if valid.len() != len {
        return Err(RanError::dim(format!("chunk: {} validity flags for {len} rows", valid.len())));
    }
    if window == 0 {
        return Err(RanError::config("chunk: window must be positive"));
    }
    let mut out = Vec::with_capacity(len.div_ceil(window));
    for offset in (0..len).step_by(window) {
        let n = window.min(len - offset);
        let mut tokens = g.slice_rows(x, offset, n)?;
        let mut flags = valid[offset..offset + n].to_vec();
        if n < window {
            let pad = g.constant(Tensor::zeros(&[window - n, dim]));
            tokens = g.concat_rows(&[tokens, pad])?;
            flags.resize(window, false);
        }
        out.push(Window {
            tokens,
            valid: flags,
            offset,
        });
    }
    Ok(out)
}

pub fn init_gpc<T: Scalar>(g: &mut Graph<'_, T>, p: &GpcInitParams, dim: usize, eps: T) -> Result<GpcState> {
    let raw = match p.g0 {
        Some(id) => g.param(id),
        None => g.constant(Tensor::zeros(&[1, dim])),
    };
    let w = g.param(p.w_g);
    let proj = g.matmul(raw, w)?;
    let (gamma, beta) = (g.param(p.gamma), g.param(p.beta));
    let value = g.layer_norm(proj, gamma, beta, eps)?;
    Ok(GpcState { value, window_index: 0 })
}

/// Per-call settings shared by every window of a layer.
pub struct EncodeSettings<'a, T> {
    pub heads: usize,
    pub eps: T,
    pub mask: MaskKind,
    pub prefix_len: usize,
    pub strict_gpc: bool,
    pub rotary: Option<&'a RotaryTable<T>>,
    pub rotate_gpc: bool,
}

impl<'a, T: Scalar> EncodeSettings<'a, T> {
    pub fn from_config(cfg: &ModelConfig, rotary: Option<&'a RotaryTable<T>>) -> Self {
        EncodeSettings {
            heads: cfg.heads,
            eps: T::lit(cfg.norm_eps),
            mask: cfg.mask,
            prefix_len: cfg.prefix_len,
            strict_gpc: cfg.strict_gpc_causal,
            rotary: if cfg.ablations.no_rotary { None } else { rotary },
            rotate_gpc: cfg.rotate_gpc,
        }
    }
}

/// `X_in = LN([G_{i-1}; X_i])`, `O_i = pMHSA(X_in)`, then SN of the GPC row
/// and of the token rows.
pub fn encode_window<T: Scalar>(
    g: &mut Graph<'_, T>,
    gpc_in: &GpcState,
    window: &Window,
    p: &LayerParams,
    s: &EncodeSettings<'_, T>,
) -> Result<WindowOutput> {
    let w = window.valid.len();
    let (gd, td) = (g.value(gpc_in.value).cols(), g.value(window.tokens).cols());
    if gd != td || g.value(window.tokens).rows() != w || g.value(gpc_in.value).rows() != 1 {
        return Err(RanError::dim("encode_window: GPC and window shapes disagree"));
    }
    let x = g.concat_rows(&[gpc_in.value, window.tokens])?;
    let (gamma, beta) = (g.param(p.in_gamma), g.param(p.in_beta));
    let x = g.layer_norm(x, gamma, beta, s.eps)?;
    let mask = build_mask(
        s.mask,
        w,
        WindowLayout {
            valid: &window.valid,
            offset: window.offset,
            prefix_len: s.prefix_len,
            strict_gpc: s.strict_gpc,
        },
    )?;
    let positions: Vec<Option<usize>> = if s.rotate_gpc {
        (0..=w).map(Some).collect()
    } else {
        std::iter::once(None).chain((0..w).map(Some)).collect()
    };
    let rotary = s.rotary.map(|table| Positions {
        table,
        rows: &positions,
    });
    let o = pmhsa(g, x, &p.attn, &mask, s.heads, rotary)?;
    let keep: Vec<bool> = std::iter::once(true).chain(window.valid.iter().copied()).collect();
    let o = g.standard_norm(o, Some(&keep), s.eps)?;
    Ok(WindowOutput {
        gpc_prime: g.slice_rows(o, 0, 1)?,
        tokens: g.slice_rows(o, 1, w)?,
    })
}

/// `G_i = LN(G'_i + G_{i-1})`, or `LN(G'_i)` without the residual.
pub fn update_gpc<T: Scalar>(
    g: &mut Graph<'_, T>,
    gpc_prime: Var,
    prev: &GpcState,
    gamma: ParamId,
    beta: ParamId,
    eps: T,
    residual: bool,
) -> Result<GpcState> {
    let x = if residual { g.add(gpc_prime, prev.value)? } else { gpc_prime };
    let (gm, bt) = (g.param(gamma), g.param(beta));
    Ok(GpcState {
        value: g.layer_norm(x, gm, bt, eps)?,
        window_index: prev.window_index + 1,
    })
}

/// Fold one layer over all windows. Returns the token blocks and `[G_1..G_m]`.
pub fn run_layer<T: Scalar>(
    g: &mut Graph<'_, T>,
    gpc0: GpcState,
    windows: &[Window],
    p: &LayerParams,
    s: &EncodeSettings<'_, T>,
    residual: bool,
) -> Result<(Vec<Var>, Vec<GpcState>)> {
    let mut state = gpc0;
    let mut tokens = Vec::with_capacity(windows.len());
    let mut history = Vec::with_capacity(windows.len());
    for w in windows {
        let out = encode_window(g, &state, w, p, s)?;
        state = update_gpc(g, out.gpc_prime, &state, p.gpc_gamma, p.gpc_beta, s.eps, residual)?;
        tokens.push(out.tokens);
        history.push(state);
    }
    Ok((tokens, history))
}

/// Result of the stacked encoder.
#[derive(Debug, Clone)]
pub struct StackOutput {
    /// `O^w`, one `W x D` block per window of the top layer.
    pub windows: Vec<Var>,
    pub valid: Vec<Vec<bool>>,
    /// `G_0`, the initial state.
    pub initial: GpcState,
    /// `[G_1..G_m]` of the top layer.
    pub history: Vec<GpcState>,
}

pub fn run_stack<T: Scalar>(
    g: &mut Graph<'_, T>,
    embedded: Var,
    valid: &[bool],
    cfg: &ModelConfig,
    p: &EncoderParams,
    rotary: Option<&RotaryTable<T>>,
) -> Result<StackOutput> {
    if p.layers.is_empty() {
        return Err(RanError::config("run_stack: no layers"));
    }
    let s = EncodeSettings::from_config(cfg, rotary);
    let residual = !cfg.ablations.no_residual;
    let windows = chunk(g, embedded, valid, cfg.window)?;
    let initial = init_gpc(g, &p.init, cfg.dim, s.eps)?;
    let valid_blocks: Vec<Vec<bool>> = windows.iter().map(|w| w.valid.clone()).collect();
    match cfg.resolved_routing() {
        GpcRouting::Independent => {
            let mut current = windows;
            let mut history = Vec::new();
            for layer in &p.layers {
                let (tokens, hist) = run_layer(g, initial, &current, layer, &s, residual)?;
                current = current
                    .into_iter()
                    .zip(tokens)
                    .map(|(w, t)| Window { tokens: t, ..w })
                    .collect();
                history = hist;
            }
            Ok(StackOutput {
                windows: current.into_iter().map(|w| w.tokens).collect(),
                valid: valid_blocks,
                initial,
                history,
            })
        }
        _ => {
            let mut carry = initial;
            let mut out = Vec::with_capacity(windows.len());
            let mut history = Vec::with_capacity(windows.len());
            for w in &windows {
                let mut input = w.clone();
                let mut state = carry;
                for layer in &p.layers {
                    let o = encode_window(g, &state, &input, layer, &s)?;
                    state = update_gpc(g, o.gpc_prime, &state, layer.gpc_gamma, layer.gpc_beta, s.eps, residual)?;
                    input.tokens = o.tokens;
                }
                carry = GpcState {
                    value: state.value,
                    window_index: w.offset / cfg.window + 1,
                };
                out.push(input.tokens);
                history.push(carry);
            }
            Ok(StackOutput {
                windows: out,
                valid: valid_blocks,
                initial,
                history,
            })
        }
    }
}
