//! Exact cosine-similarity search over an immutable vector index.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! magic    [u8; 8]   "PLXINDEX" (or "PLXVECTS" for a raw vector dump)
//! version  u32
//! dim      u32
//! count    u64
//! fprint   u64
//! ids      [u64; count]
//! vectors  [f32; count * dim]   row-major
//! digest   [u8; 32]             SHA-256 of every preceding byte
//! ```

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featurize::Fingerprint;

pub const INDEX_MAGIC: [u8; 8] = *b"PLXINDEX";
pub const VECTORS_MAGIC: [u8; 8] = *b"PLXVECTS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: u64,
    pub similarity: f64,
}

/// Hits order by similarity descending, then id ascending. `Ordering::Less` means "ranks first".
fn rank(a: &Hit, b: &Hit) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then(a.id.cmp(&b.id))
}

struct HeapEntry(Hit);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        rank(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // max-heap top is the worst-ranked hit kept so far
    fn cmp(&self, other: &Self) -> Ordering {
        rank(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    fingerprint: Fingerprint,
}

impl VectorIndex {
    /// Build from `(id, vector)` pairs; vectors are stored as f32.
    pub fn build<V: AsRef<[f64]>>(dim: usize, items: impl IntoIterator<Item = (u64, V)>, fingerprint: Fingerprint) -> Result<Self> {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for (id, v) in items {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            ids.push(id);
            vectors.extend(v.iter().map(|&x| x as f32));
        }
        Self::from_parts(dim, ids, vectors, fingerprint)
    }

    pub fn from_parts(dim: usize, ids: Vec<u64>, vectors: Vec<f32>, fingerprint: Fingerprint) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("index dimension must be positive".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                got: vectors.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for &id in &ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateId(id));
            }
        }
        let norms = vectors.chunks_exact(dim).map(norm_f32).collect();
        Ok(VectorIndex {
            dim,
            ids,
            vectors,
            norms,
            fingerprint,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// Exact top-`k` by cosine similarity. Zero-norm queries return no hits.
    pub fn top_k(&self, query: &[f64], k: usize, exclude: Option<&HashSet<u64>>) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let q_norm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        if q_norm == 0.0 {
            return Ok(Vec::new());
        }
        let nonzero: Vec<(usize, f64)> = query.iter().copied().enumerate().filter(|(_, x)| *x != 0.0).collect();

        let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
        for (row, &id) in self.ids.iter().enumerate() {
            if exclude.is_some_and(|ex| ex.contains(&id)) {
                continue;
            }
            let v = self.vector(row);
            let mut dot = 0.0;
            for &(j, q) in &nonzero {
                dot += q * f64::from(v[j]);
            }
            let denom = q_norm * self.norms[row];
            let similarity = if denom == 0.0 { 0.0 } else { dot / denom };
            let hit = Hit { id, similarity };
            if heap.len() < k {
                heap.push(HeapEntry(hit));
            } else if let Some(worst) = heap.peek() {
                if rank(&hit, &worst.0) == Ordering::Less {
                    heap.pop();
                    heap.push(HeapEntry(hit));
                }
            }
        }
        let mut hits: Vec<Hit> = heap.into_iter().map(|e| e.0).collect();
        hits.sort_by(rank);
        Ok(hits)
    }

    /// Independent queries answered in parallel; output order follows input order.
    pub fn top_k_batch(&self, queries: &[Vec<f64>], k: usize, exclude: Option<&HashSet<u64>>) -> Result<Vec<Vec<Hit>>> {
        queries.par_iter().map(|q| self.top_k(q, k, exclude)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(INDEX_MAGIC, self.dim, &self.ids, &self.vectors, self.fingerprint)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dim, ids, vectors, fp) = decode(bytes, INDEX_MAGIC)?;
        Self::from_parts(dim, ids, vectors, fp)
    }
}

fn norm_f32(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

pub fn encode(magic: [u8; 8], dim: usize, ids: &[u64], vectors: &[f32], fp: Fingerprint) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ids.len() * 8 + vectors.len() * 4 + 32);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(ids.len() as u64).to_le_bytes());
    out.extend_from_slice(&fp.0.to_le_bytes());
    for id in ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    for v in vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Header fields of a vector file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub magic: [u8; 8],
    pub version: u32,
    pub dim: usize,
    pub count: usize,
    pub fingerprint: Fingerprint,
}

/// Check header, length and trailing digest without materializing the index.
pub fn verify(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN + 32 {
        return Err(Error::Corrupt(format!("file too short ({} bytes)", bytes.len())));
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[..8]);
    if magic != INDEX_MAGIC && magic != VECTORS_MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != FORMAT_VERSION {
        return Err(Error::Corrupt(format!("unsupported version {version}")));
    }
    let dim = u32_at(12) as usize;
    let count = usize::try_from(u64_at(16)).map_err(|_| Error::Corrupt("count overflow".into()))?;
    let fingerprint = Fingerprint(u64_at(24));
    let expected = count
        .checked_mul(8 + dim * 4)
        .and_then(|b| b.checked_add(HEADER_LEN + 32))
        .ok_or_else(|| Error::Corrupt("size overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let body = &bytes[..bytes.len() - 32];
    if Sha256::digest(body).as_slice() != &bytes[bytes.len() - 32..] {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }
    Ok(Header {
        magic,
        version,
        dim,
        count,
        fingerprint,
    })
}

pub fn decode(bytes: &[u8], magic: [u8; 8]) -> Result<(usize, Vec<u64>, Vec<f32>, Fingerprint)> {
    let header = verify(bytes)?;
    if header.magic != magic {
        return Err(Error::Corrupt(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&header.magic)
        )));
    }
    let mut off = HEADER_LEN;
    let mut ids = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        ids.push(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        off += 8;
    }
    let n = header.count * header.dim;
    let mut vectors = Vec::with_capacity(n);
    for _ in 0..n {
        vectors.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    Ok((header.dim, ids, vectors, header.fingerprint))
}
