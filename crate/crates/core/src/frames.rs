//! Frame-major feature buffers passed between streaming kernels.

use crate::scalar::Scalar;

/// A sequence of `len` frames, each holding `dim` values, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Frames<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Self { dim, data: vec![T::zero(); len * dim] }
    }

    /// Wraps a flat frame-major buffer. `data.len()` must be a multiple of `dim`.
    pub fn from_vec(dim: usize, data: Vec<T>) -> Self {
        assert!(dim > 0 || data.is_empty(), "zero-dim frames must be empty");
        if dim > 0 {
            assert_eq!(data.len() % dim, 0, "buffer is not a whole number of frames");
        }
        Self { dim, data }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<T>]) -> Self {
        let mut out = Self::new(dim);
        for r in rows {
            out.push(r);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn push(&mut self, frame: &[T]) {
        assert_eq!(frame.len(), self.dim, "frame width mismatch");
        self.data.extend_from_slice(frame);
    }

    pub fn extend(&mut self, other: &Frames<T>) {
        assert_eq!(other.dim, self.dim, "frame width mismatch");
        self.data.extend_from_slice(&other.data);
    }

    /// Frames `start..end` as a new buffer.
    pub fn slice(&self, start: usize, end: usize) -> Frames<T> {
        Frames { dim: self.dim, data: self.data[start * self.dim..end * self.dim].to_vec() }
    }

    /// Removes and returns the first `n` frames.
    pub fn take_front(&mut self, n: usize) -> Frames<T> {
        let rest = self.data.split_off(n * self.dim);
        let head = std::mem::replace(&mut self.data, rest);
        Frames { dim: self.dim, data: head }
    }

    /// Keeps only the last `n` frames.
    pub fn keep_last(&mut self, n: usize) {
        let len = self.len();
        if len > n {
            self.data.drain(..(len - n) * self.dim);
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Per-frame concatenation along the feature axis.
    pub fn concat_features(parts: &[&Frames<T>]) -> Frames<T> {
        let len = parts.first().map_or(0, |p| p.len());
        assert!(parts.iter().all(|p| p.len() == len), "frame count mismatch in concat");
        let dim = parts.iter().map(|p| p.dim).sum();
        let mut data = Vec::with_capacity(len * dim);
        for i in 0..len {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Frames { dim, data }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Frames<T> {
        Frames { dim: self.dim, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Frames<T>) -> T {
        assert_eq!(self.dim, other.dim);
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Frames<U> {
        Frames { dim: self.dim, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}
