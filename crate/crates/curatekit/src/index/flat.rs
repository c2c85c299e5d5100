//! Exhaustive exact index: brute-force scan over all stored vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::l2_sq;
use crate::pool::VectorPool;

use super::{IndexConfig, Neighbor, SearchStats, TopK};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatIndex {
    pub(crate) config: IndexConfig,
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f32>,
}

impl FlatIndex {
    pub(crate) fn build(pool: &VectorPool, config: IndexConfig) -> Self {
        Self {
            config,
            dim: pool.dim(),
            ids: pool.ids().collect(),
            vectors: pool.data().to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub(crate) fn search(&self, query: &[f32], k: usize) -> (Vec<Neighbor>, SearchStats) {
        let mut top = TopK::new(k);
        for (row, v) in self.vectors.chunks_exact(self.dim).enumerate() {
            top.push(l2_sq(query, v), self.ids[row]);
        }
        (top.into_neighbors(), SearchStats { cells_visited: 1, candidates_scanned: self.size() })
    }

    pub(crate) fn reconstruct(&self, id: u64) -> Result<Vec<f32>> {
        // Fast paths for the common layouts: identity ids, then sorted ids
        // (binary search on unsorted ids is safe, it just may miss); a linear
        // scan only for arbitrary orderings.
        let row = match self.ids.get(id as usize) {
            Some(&v) if v == id => id as usize,
            _ => match self.ids.binary_search(&id) {
                Ok(r) => r,
                Err(_) => {
                    self.ids.iter().position(|&v| v == id).ok_or(Error::UnknownId(id))?
                }
            },
        };
        Ok(self.vectors[row * self.dim..(row + 1) * self.dim].to_vec())
    }

    pub(crate) fn memory_bytes(&self) -> usize {
        self.vectors.len() * 4 + self.ids.len() * 8
    }
}
