//! Inverted-file indexes: Voronoi-partitioned storage with exact (IVF-Flat)
//! or product-quantized (IVF-PQ) payloads.
//!
//! Queries rank cells by centroid distance and scan exactly `nprobe` of them.
//! A probed-cell prefix grows with nprobe, so recall is monotone in nprobe by
//! construction.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, nearest_centroid};
use crate::matrix::{l2_sq, Matrix};
use crate::pool::VectorPool;

use super::{IndexConfig, Neighbor, SearchStats, TopK};

/// id -> (list, offset) lookup, sorted by id for binary search.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Locator(Vec<(u64, u32, u32)>);

impl Locator {
    fn build(lists: &[Vec<u64>]) -> Self {
        let mut entries = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for (li, ids) in lists.iter().enumerate() {
            for (off, &id) in ids.iter().enumerate() {
                entries.push((id, li as u32, off as u32));
            }
        }
        entries.sort_unstable_by_key(|e| e.0);
        Self(entries)
    }

    fn find(&self, id: u64) -> Option<(usize, usize)> {
        self.0
            .binary_search_by_key(&id, |e| e.0)
            .ok()
            .map(|i| (self.0[i].1 as usize, self.0[i].2 as usize))
    }

    fn bytes(&self) -> usize {
        self.0.len() * std::mem::size_of::<(u64, u32, u32)>()
    }
}

/// Trains the coarse quantizer on a bounded random sample of the pool.
fn train_centroids(pool: &VectorPool, nlist: usize, iters: usize, seed: u64) -> Result<Matrix> {
    let n = pool.count();
    let sample_size = n.min((nlist * 39).max(nlist));
    let training = if sample_size == n {
        pool.as_matrix()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1fc0a5);
        let rows = rand::seq::index::sample(&mut rng, n, sample_size).into_vec();
        let mut m = Matrix::empty(pool.dim());
        for r in rows {
            m.push_row(pool.vector(r));
        }
        m
    };
    Ok(kmeans(&training, nlist, iters, seed)?.centroids)
}

/// Cells sorted by centroid distance to the query; the first `nprobe` are scanned.
fn rank_cells(centroids: &Matrix, query: &[f32]) -> Vec<(f32, usize)> {
    let mut order: Vec<(f32, usize)> =
        centroids.iter_rows().enumerate().map(|(i, c)| (l2_sq(query, c), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IvfFlatIndex {
    pub(crate) config: IndexConfig,
    dim: usize,
    nlist: usize,
    centroids: Matrix,
    list_ids: Vec<Vec<u64>>,
    list_vectors: Vec<Vec<f32>>,
    locator: Locator,
}

impl IvfFlatIndex {
    pub(crate) fn build(pool: &VectorPool, config: IndexConfig) -> Result<Self> {
        let nlist = config.resolved_nlist(pool.count());
        let centroids = train_centroids(pool, nlist, config.kmeans_iters, config.seed)?;

        let mut list_ids = vec![Vec::new(); nlist];
        let mut list_vectors = vec![Vec::new(); nlist];
        for row in 0..pool.count() {
            let v = pool.vector(row);
            let (cell, _) = nearest_centroid(&centroids, v);
            list_ids[cell].push(pool.id(row));
            list_vectors[cell].extend_from_slice(v);
        }
        let locator = Locator::build(&list_ids);
        Ok(Self { config, dim: pool.dim(), nlist, centroids, list_ids, list_vectors, locator })
    }

    pub fn size(&self) -> usize {
        self.list_ids.iter().map(Vec::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nlist(&self) -> usize {
        self.nlist
    }

    pub fn ids(&self) -> Vec<u64> {
        self.list_ids.iter().flatten().copied().collect()
    }

    /// Id at flat position `row` in list-storage order. Panics out of range.
    pub fn id_at(&self, mut row: usize) -> u64 {
        for list in &self.list_ids {
            if row < list.len() {
                return list[row];
            }
            row -= list.len();
        }
        panic!("row {row} beyond index size");
    }

    /// Cell assignment of a stored id, for partition checks.
    pub fn cell_of(&self, id: u64) -> Option<usize> {
        self.locator.find(id).map(|(list, _)| list)
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub(crate) fn search(&self, query: &[f32], k: usize) -> (Vec<Neighbor>, SearchStats) {
        let order = rank_cells(&self.centroids, query);
        let nprobe = self.config.nprobe.min(self.nlist);
        let mut top = TopK::new(k);
        let mut scanned = 0usize;
        for &(_, cell) in order.iter().take(nprobe) {
            let ids = &self.list_ids[cell];
            for (off, v) in self.list_vectors[cell].chunks_exact(self.dim).enumerate() {
                top.push(l2_sq(query, v), ids[off]);
            }
            scanned += ids.len();
        }
        (top.into_neighbors(), SearchStats { cells_visited: nprobe, candidates_scanned: scanned })
    }

    pub(crate) fn reconstruct(&self, id: u64) -> Result<Vec<f32>> {
        let (list, off) = self.locator.find(id).ok_or(Error::UnknownId(id))?;
        Ok(self.list_vectors[list][off * self.dim..(off + 1) * self.dim].to_vec())
    }

    pub(crate) fn memory_bytes(&self) -> usize {
        self.centroids.data().len() * 4
            + self.list_vectors.iter().map(|v| v.len() * 4).sum::<usize>()
            + self.list_ids.iter().map(|v| v.len() * 8).sum::<usize>()
            + self.locator.bytes()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IvfPqIndex {
    pub(crate) config: IndexConfig,
    dim: usize,
    nlist: usize,
    sub_dim: usize,
    /// Codebook entries per subspace, `2^pq_bits` when enough training data.
    ksub: usize,
    centroids: Matrix,
    /// One `ksub x sub_dim` table per subspace.
    codebooks: Vec<Matrix>,
    list_ids: Vec<Vec<u64>>,
    /// Packed codes, `code_bytes_per_vector()` bytes per stored vector.
    list_codes: Vec<Vec<u8>>,
    locator: Locator,
    /// Mean squared reconstruction error over the PQ training sample.
    train_distortion: f64,
}

impl IvfPqIndex {
    pub(crate) fn build(pool: &VectorPool, config: IndexConfig) -> Result<Self> {
        let dim = pool.dim();
        let n = pool.count();
        let nlist = config.resolved_nlist(n);
        let sub_dim = dim / config.pq_m;
        let ksub = (1usize << config.pq_bits).min(n);

        let centroids = train_centroids(pool, nlist, config.kmeans_iters, config.seed)?;

        // Codebooks come from per-subspace k-means on a bounded sample.
        let sample_size = n.min(20_000.max(ksub));
        let sample_rows: Vec<usize> = if sample_size == n {
            (0..n).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x905eed);
            rand::seq::index::sample(&mut rng, n, sample_size).into_vec()
        };
        let mut codebooks = Vec::with_capacity(config.pq_m);
        for m in 0..config.pq_m {
            let mut sub = Matrix::empty(sub_dim);
            for &r in &sample_rows {
                sub.push_row(&pool.vector(r)[m * sub_dim..(m + 1) * sub_dim]);
            }
            let fit = kmeans(&sub, ksub, config.kmeans_iters, config.seed.wrapping_add(m as u64))?;
            codebooks.push(fit.centroids);
        }

        // Training distortion: mean squared full-vector reconstruction error
        // on the codebook training sample.
        let mut distortion = 0.0f64;
        for &r in &sample_rows {
            let v = pool.vector(r);
            for (m, book) in codebooks.iter().enumerate() {
                let sub = &v[m * sub_dim..(m + 1) * sub_dim];
                let (_, d) = nearest_centroid(book, sub);
                distortion += d as f64;
            }
        }
        let train_distortion = distortion / sample_rows.len() as f64;

        let code_bytes = config.pq_m * config.pq_bits as usize / 8;
        let mut list_ids = vec![Vec::new(); nlist];
        let mut list_codes = vec![Vec::new(); nlist];
        for row in 0..n {
            let v = pool.vector(row);
            let (cell, _) = nearest_centroid(&centroids, v);
            list_ids[cell].push(pool.id(row));
            let codes: Vec<u8> = (0..config.pq_m)
                .map(|m| {
                    let sub = &v[m * sub_dim..(m + 1) * sub_dim];
                    nearest_centroid(&codebooks[m], sub).0 as u8
                })
                .collect();
            pack_codes(&codes, config.pq_bits, &mut list_codes[cell]);
            debug_assert_eq!(list_codes[cell].len(), list_ids[cell].len() * code_bytes);
        }
        let locator = Locator::build(&list_ids);

        Ok(Self {
            config,
            dim,
            nlist,
            sub_dim,
            ksub,
            centroids,
            codebooks,
            list_ids,
            list_codes,
            locator,
            train_distortion,
        })
    }

    pub fn size(&self) -> usize {
        self.list_ids.iter().map(Vec::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> Vec<u64> {
        self.list_ids.iter().flatten().copied().collect()
    }

    /// Id at flat position `row` in list-storage order. Panics out of range.
    pub fn id_at(&self, mut row: usize) -> u64 {
        for list in &self.list_ids {
            if row < list.len() {
                return list[row];
            }
            row -= list.len();
        }
        panic!("row {row} beyond index size");
    }

    /// Exact packed-code bytes stored per vector: `pq_m * pq_bits / 8`.
    pub fn code_bytes_per_vector(&self) -> usize {
        self.config.pq_m * self.config.pq_bits as usize / 8
    }

    /// Total bytes of stored codes across all lists.
    pub fn code_bytes_total(&self) -> usize {
        self.list_codes.iter().map(Vec::len).sum()
    }

    pub fn train_distortion(&self) -> f64 {
        self.train_distortion
    }

    fn decode_into(&self, codes: &[u8], out: &mut Vec<f32>) {
        for m in 0..self.config.pq_m {
            let code = unpack_code(codes, m, self.config.pq_bits) as usize;
            out.extend_from_slice(self.codebooks[m].row(code));
        }
    }

    pub(crate) fn search(&self, query: &[f32], k: usize) -> (Vec<Neighbor>, SearchStats) {
        let order = rank_cells(&self.centroids, query);
        let nprobe = self.config.nprobe.min(self.nlist);

        // Asymmetric distance tables: query sub-vector to every codeword.
        let mut tables = vec![0.0f32; self.config.pq_m * self.ksub];
        for m in 0..self.config.pq_m {
            let qsub = &query[m * self.sub_dim..(m + 1) * self.sub_dim];
            for c in 0..self.ksub {
                tables[m * self.ksub + c] = l2_sq(qsub, self.codebooks[m].row(c));
            }
        }

        let code_bytes = self.code_bytes_per_vector();
        let mut top = TopK::new(k);
        let mut scanned = 0usize;
        for &(_, cell) in order.iter().take(nprobe) {
            let ids = &self.list_ids[cell];
            for (off, codes) in self.list_codes[cell].chunks_exact(code_bytes).enumerate() {
                let mut d = 0.0f32;
                for m in 0..self.config.pq_m {
                    let code = unpack_code(codes, m, self.config.pq_bits) as usize;
                    d += tables[m * self.ksub + code];
                }
                top.push(d, ids[off]);
            }
            scanned += ids.len();
        }
        (top.into_neighbors(), SearchStats { cells_visited: nprobe, candidates_scanned: scanned })
    }

    pub(crate) fn reconstruct(&self, id: u64) -> Result<Vec<f32>> {
        let (list, off) = self.locator.find(id).ok_or(Error::UnknownId(id))?;
        let code_bytes = self.code_bytes_per_vector();
        let codes = &self.list_codes[list][off * code_bytes..(off + 1) * code_bytes];
        let mut out = Vec::with_capacity(self.dim);
        self.decode_into(codes, &mut out);
        Ok(out)
    }

    pub(crate) fn memory_bytes(&self) -> usize {
        self.centroids.data().len() * 4
            + self.codebooks.iter().map(|b| b.data().len() * 4).sum::<usize>()
            + self.code_bytes_total()
            + self.list_ids.iter().map(|v| v.len() * 8).sum::<usize>()
            + self.locator.bytes()
    }
}

fn pack_codes(codes: &[u8], bits: u8, out: &mut Vec<u8>) {
    match bits {
        8 => out.extend_from_slice(codes),
        4 => {
            for pair in codes.chunks(2) {
                let lo = pair[0] & 0x0f;
                let hi = pair.get(1).copied().unwrap_or(0) & 0x0f;
                out.push(lo | (hi << 4));
            }
        }
        _ => unreachable!("validated pq_bits"),
    }
}

#[inline]
fn unpack_code(packed: &[u8], m: usize, bits: u8) -> u8 {
    match bits {
        8 => packed[m],
        4 => {
            let byte = packed[m / 2];
            if m % 2 == 0 {
                byte & 0x0f
            } else {
                byte >> 4
            }
        }
        _ => unreachable!("validated pq_bits"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_unpack_4bit() {
        let codes = [3u8, 12, 7, 15];
        let mut packed = Vec::new();
        pack_codes(&codes, 4, &mut packed);
        assert_eq!(packed.len(), 2);
        for (m, &c) in codes.iter().enumerate() {
            assert_eq!(unpack_code(&packed, m, 4), c);
        }
    }
}
