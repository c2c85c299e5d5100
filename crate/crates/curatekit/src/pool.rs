//! Vector pool storage: binary vector files, JSON manifests, and label CSVs.
//!
//! File layout is a fixed 24-byte header (8-byte magic, u32 version, u64 count,
//! u32 dim, all little-endian) followed by row-major little-endian f32 payload.
//! A JSON sidecar manifest records count, dim, a CRC-64 of the payload, and the
//! creation timestamp, so integrity can be checked without rereading the data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const POOL_MAGIC: &[u8; 8] = b"CKITPOOL";
pub const POOL_VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Dense pool of `count` vectors of dimension `dim` with stable integer ids.
///
/// Ids default to the row index; an explicit id list may be attached when the
/// pool is a subset of a larger collection.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPool {
    dim: usize,
    data: Vec<f32>,
    ids: Option<Vec<u64>>,
}

impl VectorPool {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        let pool = Self { dim, data, ids: None };
        pool.validate()?;
        Ok(pool)
    }

    pub fn with_ids(dim: usize, data: Vec<f32>, ids: Vec<u64>) -> Result<Self> {
        let pool = Self { dim, data, ids: Some(ids) };
        pool.validate()?;
        Ok(pool)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidPool("dim must be positive".into()));
        }
        if self.data.len() % self.dim != 0 {
            return Err(Error::InvalidPool(format!(
                "data length {} is not a multiple of dim {}",
                self.data.len(),
                self.dim
            )));
        }
        let count = self.data.len() / self.dim;
        if let Some(row) = self.data.chunks_exact(self.dim).position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidPool(format!("non-finite value in row {row}")));
        }
        if let Some(ids) = &self.ids {
            if ids.len() != count {
                return Err(Error::InvalidPool(format!(
                    "id list length {} does not match count {}",
                    ids.len(),
                    count
                )));
            }
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidPool("duplicate ids".into()));
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    /// Id of the vector stored at `row`.
    pub fn id(&self, row: usize) -> u64 {
        match &self.ids {
            Some(ids) => ids[row],
            None => row as u64,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.count()).map(move |r| self.id(r))
    }

    pub fn explicit_ids(&self) -> Option<&[u64]> {
        self.ids.as_deref()
    }

    /// Row holding the vector with the given id, if any.
    pub fn row_of(&self, id: u64) -> Option<usize> {
        match &self.ids {
            Some(ids) => ids.iter().position(|&v| v == id),
            None => {
                let row = id as usize;
                (row < self.count()).then_some(row)
            }
        }
    }

    pub fn as_matrix(&self) -> Matrix {
        Matrix::new(self.dim, self.data.clone()).expect("pool invariants imply valid matrix")
    }
}

/// JSON sidecar describing a written pool file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub count: u64,
    pub dim: u32,
    /// CRC-64/XZ of the f32 payload bytes.
    pub checksum: u64,
    pub created_unix: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<u64>>,
}

pub fn manifest_path(pool_path: &Path) -> PathBuf {
    let mut os = pool_path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Writes the pool and its manifest sidecar; rejects invariant violations
/// before touching the filesystem.
pub fn write_pool(pool: &VectorPool, path: &Path) -> Result<Manifest> {
    pool.validate()?;
    let payload: Vec<u8> = pool.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let checksum = CRC64.checksum(&payload);

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(POOL_MAGIC)?;
    w.write_all(&POOL_VERSION.to_le_bytes())?;
    w.write_all(&(pool.count() as u64).to_le_bytes())?;
    w.write_all(&(pool.dim as u32).to_le_bytes())?;
    w.write_all(&payload)?;
    w.flush()?;

    let manifest = Manifest {
        count: pool.count() as u64,
        dim: pool.dim as u32,
        checksum,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        ids: pool.ids.clone(),
    };
    let mf = File::create(manifest_path(path))?;
    serde_json::to_writer_pretty(BufWriter::new(mf), &manifest)?;
    Ok(manifest)
}

/// Reads a pool file, verifying the header, payload length, checksum against
/// the manifest (when present), and value finiteness.
pub fn read_pool(path: &Path) -> Result<VectorPool> {
    let corrupt = |reason: &str| Error::Corrupt { path: path.to_path_buf(), reason: reason.into() };

    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 24];
    r.read_exact(&mut header).map_err(|_| corrupt("header shorter than 24 bytes"))?;
    if &header[0..8] != POOL_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != POOL_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[20..24].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(corrupt("dim is zero"));
    }

    let expected_bytes = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt("count*dim overflows"))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() < expected_bytes {
        return Err(corrupt("payload shorter than count*dim"));
    }
    if payload.len() > expected_bytes {
        return Err(corrupt("payload longer than count*dim"));
    }

    let mut ids = None;
    let mpath = manifest_path(path);
    if mpath.exists() {
        let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(&mpath)?))?;
        if manifest.count as usize != count || manifest.dim as usize != dim {
            return Err(corrupt("manifest count/dim disagree with header"));
        }
        if CRC64.checksum(&payload) != manifest.checksum {
            return Err(corrupt("payload checksum mismatch"));
        }
        ids = manifest.ids;
    }

    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(row) = data.chunks_exact(dim).position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(corrupt(&format!("non-finite value in row {row}")));
    }

    match ids {
        Some(ids) => VectorPool::with_ids(dim, data, ids),
        None => VectorPool::new(dim, data),
    }
}

/// Subset of pool ids with one integer class label each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPool {
    ids: Vec<u64>,
    labels: Vec<u32>,
}

impl LabeledPool {
    pub fn new(ids: Vec<u64>, labels: Vec<u32>) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::LabeledPool(format!(
                "{} ids but {} labels",
                ids.len(),
                labels.len()
            )));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::LabeledPool("duplicate ids".into()));
        }
        Ok(Self { ids, labels })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.contains(&id)
    }

    pub fn distinct_labels(&self) -> usize {
        let mut seen = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn push(&mut self, id: u64, label: u32) -> Result<()> {
        if self.contains(id) {
            return Err(Error::LabeledPool(format!("id {id} already labeled")));
        }
        self.ids.push(id);
        self.labels.push(label);
        Ok(())
    }
}

/// Reads a `(id,label)` CSV, with or without a header line.
pub fn read_labels(path: &Path) -> Result<LabeledPool> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(false).from_path(path)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (lineno, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(Error::LabeledPool(format!("line {}: expected id,label", lineno + 1)));
        }
        // Tolerate a header row on the first line.
        if lineno == 0 && record[0].parse::<u64>().is_err() {
            continue;
        }
        let id = record[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::LabeledPool(format!("line {}: bad id {:?}", lineno + 1, &record[0])))?;
        let label = record[1]
            .trim()
            .parse::<u32>()
            .map_err(|_| Error::LabeledPool(format!("line {}: bad label {:?}", lineno + 1, &record[1])))?;
        ids.push(id);
        labels.push(label);
    }
    LabeledPool::new(ids, labels)
}

pub fn write_labels(pool: &LabeledPool, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,label")?;
    for (id, label) in pool.ids.iter().zip(&pool.labels) {
        writeln!(w, "{id},{label}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_pool_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        let pool = VectorPool::new(64, vec![]).unwrap();
        let manifest = write_pool(&pool, &path).unwrap();
        assert_eq!(manifest.count, 0);
        assert_eq!(read_pool(&path).unwrap(), pool);
    }

    #[test]
    fn payload_is_count_times_dim_times_4_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let pool = VectorPool::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        write_pool(&pool, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, 24 + 24); // header + 3x2x4 payload bytes
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let pool = VectorPool::new(2, vec![1.0; 8]).unwrap();
        write_pool(&pool, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        let err = read_pool(&path).unwrap_err().to_string();
        assert!(err.contains("payload shorter than count*dim"), "{err}");
    }

    #[test]
    fn nan_payload_names_offending_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let pool = VectorPool::new(2, vec![1.0; 8]).unwrap();
        write_pool(&pool, &path).unwrap();
        // Patch row 1, first component, to NaN; drop the manifest so the
        // checksum does not mask the NaN check.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[24 + 8..24 + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        std::fs::remove_file(manifest_path(&path)).unwrap();
        let err = read_pool(&path).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn checksum_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let pool = VectorPool::new(2, vec![1.0; 8]).unwrap();
        write_pool(&pool, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[24..28].copy_from_slice(&2.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = read_pool(&path).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn nan_pool_rejected_before_write() {
        assert!(VectorPool::new(2, vec![0.0, f32::NAN]).is_err());
    }

    #[test]
    fn explicit_ids_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let pool = VectorPool::with_ids(2, vec![1.0; 4], vec![10, 42]).unwrap();
        write_pool(&pool, &path).unwrap();
        let back = read_pool(&path).unwrap();
        assert_eq!(back, pool);
        assert_eq!(back.row_of(42), Some(1));
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(VectorPool::with_ids(2, vec![1.0; 4], vec![7, 7]).is_err());
        assert!(LabeledPool::new(vec![1, 1], vec![0, 1]).is_err());
    }

    #[test]
    fn labels_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let pool = LabeledPool::new(vec![3, 1, 9], vec![0, 1, 0]).unwrap();
        write_labels(&pool, &path).unwrap();
        assert_eq!(read_labels(&path).unwrap(), pool);
    }
}
