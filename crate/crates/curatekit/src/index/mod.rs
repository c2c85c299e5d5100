//! Approximate nearest-neighbor indexes over a vector pool.
//!
//! Four families share one contract: exhaustive `Flat`, inverted-file
//! `IvfFlat`, product-quantized `IvfPq`, and graph-based `Hnsw`. Flat and
//! IVF-Flat reconstruct stored vectors exactly; IVF-PQ reconstructs decoded
//! approximations. All searches return L2 distances sorted ascending, ties
//! broken by ascending id. Indexes are immutable once built and safe to share
//! across threads.

mod flat;
mod hnsw;
mod ivf;

pub use flat::FlatIndex;
pub use hnsw::HnswIndex;
pub use ivf::{IvfFlatIndex, IvfPqIndex};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pool::VectorPool;

pub const INDEX_MAGIC: &[u8; 8] = b"CKITINDX";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    Flat,
    IvfFlat,
    IvfPq,
    Hnsw,
}

impl std::fmt::Display for IndexKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            IndexKind::Flat => "flat",
            IndexKind::IvfFlat => "ivfflat",
            IndexKind::IvfPq => "ivfpq",
            IndexKind::Hnsw => "hnsw",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flat" => Ok(IndexKind::Flat),
            "ivfflat" | "ivf-flat" | "ivf_flat" => Ok(IndexKind::IvfFlat),
            "ivfpq" | "ivf-pq" | "ivf_pq" => Ok(IndexKind::IvfPq),
            "hnsw" => Ok(IndexKind::Hnsw),
            other => Err(Error::InvalidConfig(format!("unknown index kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub kind: IndexKind,
    /// IVF partition count; `None` resolves to `4 * ceil(sqrt(N))` at build.
    pub nlist: Option<usize>,
    /// Cells scanned per IVF query.
    pub nprobe: usize,
    /// PQ sub-vector count; must divide the pool dimension.
    pub pq_m: usize,
    /// Bits per PQ sub-code, 4 or 8.
    pub pq_bits: u8,
    /// HNSW graph degree.
    pub hnsw_m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// k-means iteration budget for IVF/PQ training.
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            kind: IndexKind::Flat,
            nlist: None,
            nprobe: 8,
            pq_m: 16,
            pq_bits: 8,
            hnsw_m: 32,
            ef_construction: 200,
            ef_search: 64,
            kmeans_iters: 25,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn new(kind: IndexKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn resolved_nlist(&self, n: usize) -> usize {
        self.nlist.unwrap_or_else(|| 4 * (n as f64).sqrt().ceil() as usize)
    }

    fn validate(&self, pool: &VectorPool) -> Result<()> {
        let n = pool.count();
        if n == 0 {
            return Err(Error::InvalidConfig("cannot build an index over an empty pool".into()));
        }
        match self.kind {
            IndexKind::Flat => {}
            IndexKind::IvfFlat | IndexKind::IvfPq => {
                let nlist = self.resolved_nlist(n);
                if nlist == 0 {
                    return Err(Error::InvalidConfig("nlist must be positive".into()));
                }
                if self.nprobe == 0 || self.nprobe > nlist {
                    return Err(Error::InvalidConfig(format!(
                        "nprobe {} must be in 1..=nlist {nlist}",
                        self.nprobe
                    )));
                }
                if n < nlist {
                    return Err(Error::InvalidConfig(format!(
                        "pool of {n} vectors cannot train nlist={nlist} cells"
                    )));
                }
                if self.kind == IndexKind::IvfPq {
                    if self.pq_m == 0 || pool.dim() % self.pq_m != 0 {
                        return Err(Error::InvalidConfig(format!(
                            "pq_m {} does not divide dim {}",
                            self.pq_m,
                            pool.dim()
                        )));
                    }
                    if self.pq_bits != 4 && self.pq_bits != 8 {
                        return Err(Error::InvalidConfig("pq_bits must be 4 or 8".into()));
                    }
                    if self.pq_bits == 4 && self.pq_m % 2 != 0 {
                        return Err(Error::InvalidConfig("pq_m must be even for 4-bit codes".into()));
                    }
                }
            }
            IndexKind::Hnsw => {
                if self.hnsw_m < 2 {
                    return Err(Error::InvalidConfig("hnsw_m must be at least 2".into()));
                }
                if self.ef_construction == 0 || self.ef_search == 0 {
                    return Err(Error::InvalidConfig("ef parameters must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// One search hit: vector id and L2 distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f32,
}

/// Work counters from one search, used to verify probe accounting.
#[derive(Debug, Clone, Copy, Default)]
pub struct SearchStats {
    pub cells_visited: usize,
    pub candidates_scanned: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AnnIndex {
    Flat(FlatIndex),
    IvfFlat(IvfFlatIndex),
    IvfPq(IvfPqIndex),
    Hnsw(HnswIndex),
}

/// Builds a trained index over every vector in the pool.
pub fn build_index(pool: &VectorPool, config: IndexConfig) -> Result<AnnIndex> {
    config.validate(pool)?;
    Ok(match config.kind {
        IndexKind::Flat => AnnIndex::Flat(FlatIndex::build(pool, config)),
        IndexKind::IvfFlat => AnnIndex::IvfFlat(IvfFlatIndex::build(pool, config)?),
        IndexKind::IvfPq => AnnIndex::IvfPq(IvfPqIndex::build(pool, config)?),
        IndexKind::Hnsw => AnnIndex::Hnsw(HnswIndex::build(pool, config)?),
    })
}

impl AnnIndex {
    pub fn kind(&self) -> IndexKind {
        match self {
            AnnIndex::Flat(_) => IndexKind::Flat,
            AnnIndex::IvfFlat(_) => IndexKind::IvfFlat,
            AnnIndex::IvfPq(_) => IndexKind::IvfPq,
            AnnIndex::Hnsw(_) => IndexKind::Hnsw,
        }
    }

    pub fn config(&self) -> &IndexConfig {
        match self {
            AnnIndex::Flat(i) => &i.config,
            AnnIndex::IvfFlat(i) => &i.config,
            AnnIndex::IvfPq(i) => &i.config,
            AnnIndex::Hnsw(i) => &i.config,
        }
    }

    pub fn size(&self) -> usize {
        match self {
            AnnIndex::Flat(i) => i.size(),
            AnnIndex::IvfFlat(i) => i.size(),
            AnnIndex::IvfPq(i) => i.size(),
            AnnIndex::Hnsw(i) => i.size(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnnIndex::Flat(i) => i.dim(),
            AnnIndex::IvfFlat(i) => i.dim(),
            AnnIndex::IvfPq(i) => i.dim(),
            AnnIndex::Hnsw(i) => i.dim(),
        }
    }

    /// Id at position `row` of storage order, without materializing the id
    /// list. Panics when `row >= size()`.
    pub fn id_at(&self, row: usize) -> u64 {
        match self {
            AnnIndex::Flat(i) => i.ids()[row],
            AnnIndex::IvfFlat(i) => i.id_at(row),
            AnnIndex::IvfPq(i) => i.id_at(row),
            AnnIndex::Hnsw(i) => i.ids()[row],
        }
    }

    /// Every indexed id, in storage order.
    pub fn ids(&self) -> Vec<u64> {
        match self {
            AnnIndex::Flat(i) => i.ids().to_vec(),
            AnnIndex::IvfFlat(i) => i.ids(),
            AnnIndex::IvfPq(i) => i.ids(),
            AnnIndex::Hnsw(i) => i.ids().to_vec(),
        }
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        self.search_with_stats(query, k).map(|(hits, _)| hits)
    }

    pub fn search_with_stats(&self, query: &[f32], k: usize) -> Result<(Vec<Neighbor>, SearchStats)> {
        self.check_query(query, k)?;
        Ok(match self {
            AnnIndex::Flat(i) => i.search(query, k),
            AnnIndex::IvfFlat(i) => i.search(query, k),
            AnnIndex::IvfPq(i) => i.search(query, k),
            AnnIndex::Hnsw(i) => i.search(query, k),
        })
    }

    fn check_query(&self, query: &[f32], k: usize) -> Result<()> {
        if self.size() == 0 {
            return Err(Error::Untrained);
        }
        if query.len() != self.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), got: query.len() });
        }
        if k == 0 || k > self.size() {
            return Err(Error::InvalidConfig(format!(
                "k={k} out of range for index of size {}",
                self.size()
            )));
        }
        Ok(())
    }

    pub fn reconstruct(&self, id: u64) -> Result<Vec<f32>> {
        match self {
            AnnIndex::Flat(i) => i.reconstruct(id),
            AnnIndex::IvfFlat(i) => i.reconstruct(id),
            AnnIndex::IvfPq(i) => i.reconstruct(id),
            AnnIndex::Hnsw(i) => i.reconstruct(id),
        }
    }

    /// Full-precision (Flat, IVF-Flat, HNSW) or decoded (IVF-PQ) vectors for
    /// the given ids. An empty id list yields an empty matrix of the index dim.
    pub fn reconstruct_batch(&self, ids: &[u64]) -> Result<Matrix> {
        let mut out = Matrix::empty(self.dim());
        for &id in ids {
            out.push_row(&self.reconstruct(id)?);
        }
        Ok(out)
    }

    /// Total bytes of the index's in-memory structures.
    pub fn memory_bytes(&self) -> usize {
        match self {
            AnnIndex::Flat(i) => i.memory_bytes(),
            AnnIndex::IvfFlat(i) => i.memory_bytes(),
            AnnIndex::IvfPq(i) => i.memory_bytes(),
            AnnIndex::Hnsw(i) => i.memory_bytes(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        bincode::serialize_into(&mut w, self)
            .map_err(|e| Error::InvalidConfig(format!("index serialization failed: {e}")))?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AnnIndex> {
        let corrupt = |reason: &str| Error::Corrupt { path: path.to_path_buf(), reason: reason.into() };
        let mut r = BufReader::new(File::open(path)?);
        let mut header = [0u8; 12];
        r.read_exact(&mut header).map_err(|_| corrupt("header shorter than 12 bytes"))?;
        if &header[0..8] != INDEX_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        bincode::deserialize_from(r).map_err(|e| corrupt(&format!("body: {e}")))
    }
}

/// Keeps the k best (distance, id) pairs, ties broken by ascending id.
pub(crate) struct TopK {
    k: usize,
    heap: std::collections::BinaryHeap<HeapEntry>,
}

#[derive(PartialEq)]
pub(crate) struct HeapEntry(pub f32, pub u64);

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self { k, heap: std::collections::BinaryHeap::with_capacity(k + 1) }
    }

    #[inline]
    pub fn push(&mut self, dist_sq: f32, id: u64) {
        if self.heap.len() < self.k {
            self.heap.push(HeapEntry(dist_sq, id));
        } else if let Some(worst) = self.heap.peek() {
            if HeapEntry(dist_sq, id) < *worst {
                self.heap.pop();
                self.heap.push(HeapEntry(dist_sq, id));
            }
        }
    }

    /// Neighbors sorted ascending, squared distances converted to L2.
    pub fn into_neighbors(self) -> Vec<Neighbor> {
        let mut entries: Vec<HeapEntry> = self.heap.into_vec();
        entries.sort();
        entries
            .into_iter()
            .map(|HeapEntry(d, id)| Neighbor { id, distance: d.max(0.0).sqrt() })
            .collect()
    }
}
