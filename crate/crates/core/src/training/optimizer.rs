use crate::error::{RanError, Result};
use crate::numerics::{ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Missing gradients count as zero. A
/// non-finite gradient aborts the step before anything is modified.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], state: &mut AdamState<T>) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(RanError::dim("adam_step: gradient/state count differs from parameters"));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.shape() != params.tensors()[i].shape() {
                return Err(RanError::dim(format!("adam_step: gradient shape for {}", params.names()[i])));
            }
            if !g.all_finite() {
                return Err(RanError::Numeric(format!("non-finite gradient for {}", params.names()[i])));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let (one, eps) = (T::one(), T::lit(state.eps));
    let c1 = T::lit(1.0 - state.beta1.powi(t));
    let c2 = T::lit(1.0 - state.beta2.powi(t));
    let lr = T::lit(state.lr);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let g = grads[i].as_ref().map(Tensor::data);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(T::zero(), |g| g[j]);
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flatten()
        .map(|g| g.data().iter().map(|x| x.to_f64().unwrap_or(0.0).powi(2)).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }
    norm
}
