use crate::error::{RanError, Result};
use crate::numerics::scalar::Scalar;

/// Dense row-major array. Most kernels treat it as a matrix of
/// `rows() x cols()` where `cols()` is the last dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(RanError::dim(format!("invalid shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(RanError::dim(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "invalid shape {shape:?}"
        );
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(RanError::dim("ragged rows"));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn row_vector(values: Vec<T>) -> Self {
        let n = values.len();
        Tensor {
            shape: vec![1, n],
            data: values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(RanError::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.to_f64().expect("finite cast")).expect("cast"))
                .collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Rows `start..start+len` as a new matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor<T> {
        let c = self.cols();
        Tensor {
            shape: vec![len, c],
            data: self.data[start * c..(start + len) * c].to_vec(),
        }
    }

    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let cols = parts
            .first()
            .ok_or_else(|| RanError::dim("concat of nothing"))?
            .cols();
        if parts.iter().any(|p| p.cols() != cols) {
            return Err(RanError::dim("concat_rows: column mismatch"));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        let rows = data.len() / cols;
        Tensor::matrix(rows, cols, data)
    }

    pub fn transpose(&self) -> Tensor<T> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }
}
