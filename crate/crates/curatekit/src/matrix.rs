//! Minimal row-major f32 matrix used for vector batches.

use crate::error::{Error, Result};

/// Dense row-major matrix of `rows x dim` f32 values.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Matrix {
    dim: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("matrix dim must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::InvalidConfig(format!(
                "matrix data length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = Vec<f32>>) -> Result<Self> {
        let mut data = Vec::new();
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: row.len() });
            }
            data.extend_from_slice(&row);
        }
        Self::new(dim, data)
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn push_row(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Mean of all rows; errors on an empty matrix.
    pub fn centroid(&self) -> Result<Vec<f32>> {
        if self.rows() == 0 {
            return Err(Error::InvalidConfig("centroid of empty matrix".into()));
        }
        let mut c = vec![0.0f64; self.dim];
        for row in self.iter_rows() {
            for (acc, &v) in c.iter_mut().zip(row) {
                *acc += v as f64;
            }
        }
        let n = self.rows() as f64;
        Ok(c.into_iter().map(|v| (v / n) as f32).collect())
    }
}

/// Squared L2 distance between two equal-length slices.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f32;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Pairwise L2 distances, shape `|a| x |b|` flattened row-major.
pub fn pairwise_distances(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { expected: a.dim(), got: b.dim() });
    }
    let (na, nb) = (a.rows(), b.rows());
    let mut out = Vec::with_capacity(na * nb);
    for i in 0..na {
        let ra = a.row(i);
        for j in 0..nb {
            out.push(l2_sq(ra, b.row(j)).sqrt());
        }
    }
    Matrix::new(nb.max(1), out)
}
