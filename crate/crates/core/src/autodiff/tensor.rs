//! Dense row-major f64 tensor.
//!
//! Rank 0 (shape `[]`) holds a single scalar; episode features, weights and
//! logits are rank 2. All arithmetic on tensors happens through graph ops so
//! the same kernels serve both initial evaluation and record replay.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product::<usize>();
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Rank-2 tensor from per-row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("from_rows: no rows".into()));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidArgument("from_rows: ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::from_vec(&[rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// True for any single-element tensor (`[]`, `[1]`, `[1, 1]`, ...).
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NonScalar { op: "scalar_value", shape: self.shape.clone() })
        }
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let w = self.shape[1];
        &self.data[row * w..(row + 1) * w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret storage under a new shape of equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) || expected != self.data.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot reshape {:?} ({} values) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_shape_is_empty() {
        let t = Tensor::scalar(3.5);
        assert_eq!(t.shape(), &[] as &[usize]);
        assert!(t.is_scalar());
        assert_eq!(t.scalar_value().unwrap(), 3.5);
    }

    #[test]
    fn from_vec_rejects_bad_extents() {
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.get(1, 0), 4.0);
        assert_eq!(t.row(1), &[4., 5., 6.]);
    }
}
