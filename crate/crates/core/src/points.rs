//! Row-major point sets (particles, target samples, probe sets).

use crate::error::{argument, Result};

/// `n` points in `R^dim`, stored row-major so each point is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self { data: vec![0.0; n * dim], dim }
    }

    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return argument("point dimension must be positive");
        }
        if !data.len().is_multiple_of(dim) {
            return argument(format!(
                "flat buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            ));
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return argument("cannot infer dimension from an empty row list");
        };
        let dim = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return argument(format!("row {i} has length {}, expected {dim}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(data, dim)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the first point with a non-finite coordinate.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.rows().position(|r| r.iter().any(|v| !v.is_finite()))
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Select rows by index, in order.
    pub fn select(&self, idx: &[usize]) -> Points {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Points { data, dim: self.dim }
    }

    /// Stack two point sets with equal dimension.
    pub fn concat(&self, other: &Points) -> Result<Points> {
        if self.dim != other.dim {
            return argument(format!("dimension mismatch: {} vs {}", self.dim, other.dim));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Points { data, dim: self.dim })
    }
}

#[inline]
pub fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
