//! Dense row-major tensors and a define-by-run reverse-mode tape.

mod grad_check;
mod tape;

pub use grad_check::{five_point, grad_check, numeric_gradient};
pub use tape::{Conv2dGeometry, Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Plain n-dimensional array. Values recorded on a [`Tape`] are wrapped in a [`Var`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim("tensor", format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Tensor { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        Self::new(vec![n, d], rows.concat())
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let d = self.shape[1];
        &self.data[i * d..(i + 1) * d]
    }

    /// Gathers rows of a tensor whose leading axis indexes samples.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if self.shape.is_empty() {
            return Err(Error::dim("select_rows", "rank-0 tensor"));
        }
        if idx.is_empty() {
            return Err(Error::DegenerateInput("select_rows with no indices".into()));
        }
        let stride: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * stride);
        for &i in idx {
            if i >= self.shape[0] {
                return Err(Error::dim("select_rows", format!("row {i} out of {}", self.shape[0])));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Ok(Tensor { shape, data })
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// For every flat index of `shape`, the flat index into the tensor obtained by
/// removing `axes`. Also returns the reduced shape.
pub(crate) fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
    let out_shape: Vec<usize> = kept.iter().map(|&a| shape[a]).collect();
    // stride of each full-shape axis inside the reduced tensor (0 for removed axes)
    let mut out_stride = vec![0usize; shape.len()];
    let mut acc = 1;
    for &a in kept.iter().rev() {
        out_stride[a] = acc;
        acc *= shape[a];
    }
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; shape.len()];
    let mut pos = 0usize;
    for _ in 0..total {
        map.push(pos);
        for ax in (0..shape.len()).rev() {
            counter[ax] += 1;
            pos += out_stride[ax];
            if counter[ax] < shape[ax] {
                break;
            }
            pos -= out_stride[ax] * shape[ax];
            counter[ax] = 0;
        }
    }
    (out_shape, map)
}
