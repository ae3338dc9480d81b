//! Rotary positional encoding with window-local positions.

use crate::error::{RanError, Result};
use crate::numerics::{Graph, Scalar, Tensor, Var};

pub const DEFAULT_ROTARY_BASE: f64 = 10_000.0;

/// Cached `cos`/`sin` of `pos * base^(-2j/dim)` for every position below
/// `max_positions` and pair index `j < dim/2`.
#[derive(Debug, Clone)]
pub struct RotaryTable<T> {
    base: f64,
    dim: usize,
    max_positions: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Scalar> RotaryTable<T> {
    pub fn new(dim: usize, max_positions: usize, base: f64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(RanError::config(format!("rotary head dim {dim} must be even")));
        }
        let half = dim / 2;
        let mut cos = Vec::with_capacity(max_positions * half);
        let mut sin = Vec::with_capacity(max_positions * half);
        for pos in 0..max_positions {
            for j in 0..half {
                let theta = base.powf(-2.0 * j as f64 / dim as f64);
                let angle = pos as f64 * theta;
                cos.push(T::lit(angle.cos()));
                sin.push(T::lit(angle.sin()));
            }
        }
        Ok(RotaryTable {
            base,
            dim,
            max_positions,
            cos,
            sin,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Per-row angle tables for a block of rows; `None` rows are left unrotated.
    pub fn angles(&self, positions: &[Option<usize>]) -> Result<(Vec<T>, Vec<T>)> {
        let half = self.dim / 2;
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        for p in positions {
            match *p {
                Some(pos) if pos >= self.max_positions => {
                    return Err(RanError::config(format!(
                        "position {pos} beyond rotary table of {}",
                        self.max_positions
                    )))
                }
                Some(pos) => {
                    cos.extend_from_slice(&self.cos[pos * half..(pos + 1) * half]);
                    sin.extend_from_slice(&self.sin[pos * half..(pos + 1) * half]);
                }
                None => {
                    cos.extend(std::iter::repeat_n(T::one(), half));
                    sin.extend(std::iter::repeat_n(T::zero(), half));
                }
            }
        }
        Ok((cos, sin))
    }

    /// Rotate a `positions.len() x k*dim` block head by head on the tape.
    pub fn apply(&self, g: &mut Graph<'_, T>, x: Var, positions: &[Option<usize>]) -> Result<Var> {
        let (cos, sin) = self.angles(positions)?;
        g.rotary(x, self.dim, cos, sin)
    }
}

/// Rotate each row of `x` (`positions.len() x dim`) by its own position.
pub fn apply_rotary<T: Scalar>(x: &Tensor<T>, positions: &[usize], base: f64) -> Result<Tensor<T>> {
    let dim = x.cols();
    if positions.len() != x.rows() {
        return Err(RanError::dim("apply_rotary: one position per row"));
    }
    let max = positions.iter().copied().max().unwrap_or(0) + 1;
    let table = RotaryTable::<T>::new(dim, max, base)?;
    let half = dim / 2;
    let mut out = x.clone();
    for (r, &pos) in positions.iter().enumerate() {
        let row = out.row_mut(r);
        for j in 0..half {
            let (c, s) = (table.cos[pos * half + j], table.sin[pos * half + j]);
            let (x0, x1) = (row[2 * j], row[2 * j + 1]);
            row[2 * j] = x0 * c - x1 * s;
            row[2 * j + 1] = x0 * s + x1 * c;
        }
    }
    Ok(out)
}
