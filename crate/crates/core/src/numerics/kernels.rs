//! Forward kernels shared by the autodiff tape and by direct callers.

use crate::error::{RanError, Result};
use crate::numerics::gemm::{gemm, View, ViewMut};
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// Default variance guard for LayerNorm and standard normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Affine parameters of a layer normalization over the feature axis.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub eps: T,
}

impl<T: Scalar> NormParams<T> {
    pub fn identity(dim: usize) -> Self {
        NormParams {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            eps: T::lit(NORM_EPS),
        }
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.cols() != b.rows() {
        return Err(RanError::dim(format!(
            "matmul: {}x{} times {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Tensor::zeros(&[a.rows(), b.cols()]);
    gemm(T::one(), View::of(a), View::of(b), T::zero(), ViewMut::of(&mut out));
    Ok(out)
}

/// In-place stable softmax of one row. `-inf` entries become exactly zero.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) -> Result<()> {
    let mut max = T::neg_infinity();
    for &v in row.iter() {
        if v.is_nan() || v == T::infinity() {
            return Err(RanError::Numeric("softmax input is not finite".into()));
        }
        if v > max {
            max = v;
        }
    }
    if max == T::neg_infinity() {
        return Err(RanError::Numeric("softmax row is fully masked".into()));
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
    Ok(())
}

pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = x.clone();
    let c = out.cols();
    for row in out.data_mut().chunks_mut(c) {
        softmax_in_place(row)?;
    }
    Ok(out)
}

/// Mean and `1/sqrt(var + eps)` of one feature vector.
pub(crate) fn moments<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::of_usize(row.len());
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, p: &NormParams<T>) -> Result<Tensor<T>> {
    let d = x.cols();
    if p.gamma.len() != d || p.beta.len() != d {
        return Err(RanError::dim(format!(
            "layer_norm: feature dim {d}, params {}",
            p.gamma.len()
        )));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let (mean, rstd) = moments(row, p.eps);
        for (j, v) in row.iter_mut().enumerate() {
            *v = p.gamma[j] * (*v - mean) * rstd + p.beta[j];
        }
    }
    Ok(out)
}

/// Parameter-free per-vector standardization with the default eps guard.
pub fn standard_norm<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    standard_norm_eps(x, T::lit(NORM_EPS))
}

pub fn standard_norm_eps<T: Scalar>(x: &Tensor<T>, eps: T) -> Tensor<T> {
    let d = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let (mean, rstd) = moments(row, eps);
        for v in row.iter_mut() {
            *v = (*v - mean) * rstd;
        }
    }
    out
}

/// Per-feature maximum over valid rows. Returns the pooled `1 x D` row and
/// the winning row index per feature (lowest index on ties).
pub fn max_pool_time<T: Scalar>(x: &Tensor<T>, valid: &[bool]) -> Result<(Tensor<T>, Vec<usize>)> {
    if valid.len() != x.rows() {
        return Err(RanError::dim("max_pool_time: mask length"));
    }
    let first = valid
        .iter()
        .position(|&v| v)
        .ok_or_else(|| RanError::Precondition("pooling over an all-pad sequence".into()))?;
    let d = x.cols();
    let mut best = x.row(first).to_vec();
    let mut arg = vec![first; d];
    for (i, _) in valid.iter().enumerate().skip(first + 1).filter(|(_, &v)| v) {
        for (j, &v) in x.row(i).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = i;
            }
        }
    }
    Ok((Tensor::row_vector(best), arg))
}

pub fn mean_pool_time<T: Scalar>(x: &Tensor<T>, valid: &[bool]) -> Result<Tensor<T>> {
    if valid.len() != x.rows() {
        return Err(RanError::dim("mean_pool_time: mask length"));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(RanError::Precondition("pooling over an all-pad sequence".into()));
    }
    let d = x.cols();
    let mut acc = vec![T::zero(); d];
    for i in (0..x.rows()).filter(|&i| valid[i]) {
        for (a, &v) in acc.iter_mut().zip(x.row(i)) {
            *a += v;
        }
    }
    let inv = T::one() / T::of_usize(count);
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(Tensor::row_vector(acc))
}
