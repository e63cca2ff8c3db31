//! Dense and sparse parameter-space vectors.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Flat model parameter vector. Length is fixed per experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector<S>(Vec<S>);

impl<S: Scalar> ParameterVector<S> {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![S::zero(); dim])
    }

    pub fn from_vec(values: Vec<S>) -> Self {
        Self(values)
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Self(values.iter().map(|&v| S::of(v)).collect())
    }

    pub fn into_vec(self) -> Vec<S> {
        self.0
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }

    pub fn norm_sq(&self) -> S {
        self.0.iter().map(|&v| v * v).sum()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: S, other: &Self) -> Result<()> {
        Error::check_dim(self.dim(), other.dim())?;
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// `self += other`, written without a multiplication so that adding a
    /// precomputed increment is bit-for-bit the same everywhere.
    pub fn add_assign_vec(&mut self, other: &Self) -> Result<()> {
        Error::check_dim(self.dim(), other.dim())?;
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Error::check_dim(self.dim(), other.dim())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect(),
        ))
    }

    /// In-place counterpart of [`apply_sparse`].
    pub fn add_sparse(&mut self, delta: &SparseDelta<S>, scale: S) -> Result<()> {
        Error::check_dim(self.dim(), delta.dim())?;
        for (i, v) in delta.iter() {
            if i >= self.dim() {
                return Err(Error::Index {
                    index: i,
                    dim: self.dim(),
                });
            }
            self.0[i] += scale * v;
        }
        Ok(())
    }
}

impl<S> Deref for ParameterVector<S> {
    type Target = [S];

    fn deref(&self) -> &[S] {
        &self.0
    }
}

impl<S> DerefMut for ParameterVector<S> {
    fn deref_mut(&mut self) -> &mut [S] {
        &mut self.0
    }
}

impl<S> From<Vec<S>> for ParameterVector<S> {
    fn from(v: Vec<S>) -> Self {
        Self(v)
    }
}

/// Sparse vector of `(index, value)` pairs over a dense dimension `dim`.
///
/// Indices are strictly increasing and below `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDelta<S> {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> SparseDelta<S> {
    pub fn new(dim: usize, indices: Vec<usize>, values: Vec<S>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Dimension {
                expected: indices.len(),
                got: values.len(),
            });
        }
        if indices.len() > dim {
            return Err(Error::arg(format!(
                "{} entries exceed dimension {dim}",
                indices.len()
            )));
        }
        for (pos, &i) in indices.iter().enumerate() {
            if i >= dim {
                return Err(Error::Index { index: i, dim });
            }
            if pos > 0 && indices[pos - 1] >= i {
                return Err(Error::arg("sparse indices must be strictly increasing"));
            }
        }
        Ok(Self {
            dim,
            indices,
            values,
        })
    }

    pub fn from_pairs(dim: usize, pairs: &[(usize, S)]) -> Result<Self> {
        let (indices, values) = pairs.iter().copied().unzip();
        Self::new(dim, indices, values)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Every coordinate of `x`, in order.
    pub fn dense(x: &[S]) -> Self {
        Self {
            dim: x.len(),
            indices: (0..x.len()).collect(),
            values: x.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, S)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> ParameterVector<S> {
        let mut out = ParameterVector::zeros(self.dim);
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

/// Returns `sum_i weights[i] * vectors[i]`, accumulated in list order.
pub fn weighted_combine<S: Scalar>(
    vectors: &[&ParameterVector<S>],
    weights: &[S],
) -> Result<ParameterVector<S>> {
    Error::check_dim(vectors.len(), weights.len())?;
    let first = vectors
        .first()
        .ok_or_else(|| Error::arg("weighted_combine needs at least one vector"))?;
    let dim = first.dim();
    let mut out = ParameterVector::zeros(dim);
    for (v, &w) in vectors.iter().zip(weights) {
        Error::check_dim(dim, v.dim())?;
        for (o, &x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// `dense + scale * delta`, touching only the coordinates the delta carries.
pub fn apply_sparse<S: Scalar>(
    dense: &ParameterVector<S>,
    delta: &SparseDelta<S>,
    scale: S,
) -> Result<ParameterVector<S>> {
    let mut out = dense.clone();
    out.add_sparse(delta, scale)?;
    Ok(out)
}

/// `dim` i.i.d. draws from `N(0, scale^2)`.
///
/// A zero scale returns zeros without consuming the stream.
pub fn gaussian_noise<S: Scalar>(
    dim: usize,
    scale: S,
    rng: &mut RngStream,
) -> Result<ParameterVector<S>> {
    if dim == 0 {
        return Err(Error::arg("noise dimension must be positive"));
    }
    if !(scale >= S::zero()) || !scale.is_finite() {
        return Err(Error::arg(format!("noise scale must be finite and >= 0, got {scale}")));
    }
    if scale == S::zero() {
        return Ok(ParameterVector::zeros(dim));
    }
    Ok(ParameterVector::from_vec(
        (0..dim).map(|_| scale * S::of(rng.standard_normal())).collect(),
    ))
}
