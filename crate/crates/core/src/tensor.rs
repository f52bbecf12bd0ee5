//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Dense n-dimensional array in row-major order.
///
/// `shape.iter().product() == data.len()` always holds. A scalar is a tensor
/// of shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor shape must have positive extents, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n]).expect("positive extents")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::lit(v)).collect())
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Tensor::from_f64(&[rows.len(), cols], &data)
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of rows when viewed as `[shape[0], rest]`.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Elements per leading-axis slice.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    /// Copies leading-axis slices `[start, end)` into a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape[0] {
            return Err(Error::invalid(format!(
                "slice_rows: range {start}..{end} out of bounds for {:?}",
                self.shape
            )));
        }
        let w = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * w..end * w].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Index of the largest element in each leading-axis row; ties go to the
    /// first occurrence.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_lossy()).collect()
    }
}
