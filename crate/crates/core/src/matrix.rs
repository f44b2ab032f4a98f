//! Compressed sparse row storage for feature matrices.

use crate::error::{Error, Result};
use crate::featurize::Fingerprint;

/// A sparse vector with strictly ascending indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn from_dense(values: &[f64]) -> Self {
        let mut out = SparseVector {
            dim: values.len(),
            ..Default::default()
        };
        for (i, &v) in values.iter().enumerate() {
            if v != 0.0 {
                out.indices.push(i as u32);
                out.values.push(v);
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    pub fn dot_dense(&self, w: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * w[i as usize]).sum()
    }
}

/// Row-major sparse matrix tagged with the fingerprint of the features it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    fingerprint: Fingerprint,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, fingerprint: Fingerprint) -> Self {
        FeatureMatrix {
            dim,
            fingerprint,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(rows: &[Vec<f64>], dim: usize, fingerprint: Fingerprint) -> Result<Self> {
        let mut m = Self::new(dim, fingerprint);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            m.push(&SparseVector::from_dense(row))?;
        }
        Ok(m)
    }

    pub fn from_sparse(rows: impl IntoIterator<Item = SparseVector>, dim: usize, fingerprint: Fingerprint) -> Result<Self> {
        let mut m = Self::new(dim, fingerprint);
        for row in rows {
            m.push(&row)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, row: &SparseVector) -> Result<()> {
        if row.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.dim,
            });
        }
        self.indices.extend_from_slice(&row.indices);
        self.values.extend_from_slice(&row.values);
        self.indptr.push(self.indices.len());
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    #[inline]
    pub fn dot_row(&self, i: usize, w: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        idx.iter().zip(val).map(|(&j, &v)| v * w[j as usize]).sum()
    }

    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let (idx, val) = self.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            out[j as usize] = v;
        }
        out
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut m = Self::new(self.dim, self.fingerprint);
        for &r in rows {
            let (idx, val) = self.row(r);
            m.indices.extend_from_slice(idx);
            m.values.extend_from_slice(val);
            m.indptr.push(m.indices.len());
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
