//! Bounds-checked strided views over `matrixmultiply`.

use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    data: &'a [T],
    off: usize,
    pub rows: usize,
    pub cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a, T: Scalar> View<'a, T> {
    pub fn of(t: &'a Tensor<T>) -> Self {
        Self::raw(t.data(), t.rows(), t.cols())
    }

    pub fn raw(data: &'a [T], rows: usize, cols: usize) -> Self {
        View {
            data,
            off: 0,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Column block `start..start+len`.
    pub fn col_block(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        View {
            off: self.off + start * self.cs as usize,
            cols: len,
            ..self
        }
    }

    fn check(&self) {
        if self.rows == 0 || self.cols == 0 {
            return;
        }
        let last = self.off + (self.rows - 1) * self.rs as usize + (self.cols - 1) * self.cs as usize;
        assert!(last < self.data.len(), "gemm view out of bounds");
    }
}

pub(crate) struct ViewMut<'a, T> {
    data: &'a mut [T],
    off: usize,
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a, T: Scalar> ViewMut<'a, T> {
    pub fn raw(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        ViewMut {
            data,
            off: 0,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn of(t: &'a mut Tensor<T>) -> Self {
        let (r, c) = (t.rows(), t.cols());
        Self::raw(t.data_mut(), r, c)
    }

    pub fn t(self) -> Self {
        ViewMut {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    pub fn col_block(self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.cols);
        ViewMut {
            off: self.off + start * self.cs as usize,
            cols: len,
            ..self
        }
    }
}

/// `c = alpha * a * b + beta * c`. With `beta == 0` the old contents of `c`
/// are never read.
pub(crate) fn gemm<T: Scalar>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: ViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    a.check();
    b.check();
    if c.rows > 0 && c.cols > 0 {
        let last = c.off + (c.rows - 1) * c.rs as usize + (c.cols - 1) * c.cs as usize;
        assert!(last < c.data.len(), "gemm output out of bounds");
    }
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for i in 0..c.rows {
            for j in 0..c.cols {
                let idx = c.off + i * c.rs as usize + j * c.cs as usize;
                c.data[idx] = if beta == T::zero() { T::zero() } else { beta * c.data[idx] };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above against their own
    // slices, and `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.off),
            a.rs,
            a.cs,
            b.data.as_ptr().add(b.off),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr().add(c.off),
            c.rs,
            c.cs,
        );
    }
}
