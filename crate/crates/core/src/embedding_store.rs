//! Fixed-dimension embedding vectors keyed by context, stored in the EMBS
//! binary container.
//!
//! Layout (little-endian): `"EMBS"`, version `u16`, dim `u32`, count `u64`,
//! then `count` records of `key_len u16`, UTF-8 key bytes, `dim` x `f32`.
//! Writers emit records sorted bytewise by key; readers accept any order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dataset::UsePair;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMBS";
pub const VERSION: u16 = 1;
pub const DEFAULT_DIM: usize = 768;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub key: String,
    pub vector: Vec<f32>,
}

/// Key of the embedding for context 1 or 2 of an instance.
pub fn context_key(instance_id: &str, context: u8) -> String {
    format!("{instance_id}#{context}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature {
    pub instance_id: String,
    pub x: Vec<f64>,
}

/// Immutable id-keyed store. Vectors are held widened to `f64`; every value
/// originates from an `f32`, so narrowing back is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn from_records(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::Validation(format!("invalid embedding dimension {dim}")));
        }
        let mut map = BTreeMap::new();
        for rec in records {
            check_record(dim, &rec.key, &rec.vector)?;
            let widened = rec.vector.iter().map(|&v| v as f64).collect();
            if map.insert(rec.key.clone(), widened).is_some() {
                return Err(Error::Validation(format!("duplicate embedding key {}", rec.key)));
            }
        }
        Ok(Self { dim, records: map })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.records.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.records.contains_key(key)
    }

    /// Records in canonical (sorted key) order, narrowed back to `f32`.
    pub fn records(&self) -> Vec<EmbeddingRecord> {
        self.records
            .iter()
            .map(|(k, v)| EmbeddingRecord {
                key: k.clone(),
                vector: v.iter().map(|&x| x as f32).collect(),
            })
            .collect()
    }

    /// Keys of both contexts of `pair` that are absent from the store.
    pub fn missing_keys(&self, pair: &UsePair) -> Vec<String> {
        [1, 2]
            .into_iter()
            .map(|c| context_key(&pair.instance_id, c))
            .filter(|k| !self.contains(k))
            .collect()
    }

    /// Concatenate E(context1) and E(context2) into one 2d feature vector.
    pub fn pair_feature(&self, pair: &UsePair) -> Result<PairFeature> {
        let mut x = Vec::with_capacity(2 * self.dim);
        for c in [1, 2] {
            let key = context_key(&pair.instance_id, c);
            let v = self.get(&key).ok_or_else(|| Error::MissingKeys(vec![key]))?;
            x.extend_from_slice(v);
        }
        Ok(PairFeature {
            instance_id: pair.instance_id.clone(),
            x,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_store(path, self.dim, &self.records())
    }
}

fn check_record(dim: usize, key: &str, vector: &[f32]) -> Result<()> {
    if vector.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: vector.len(),
        });
    }
    if key.len() > u16::MAX as usize {
        return Err(Error::Validation(format!(
            "embedding key of {} bytes exceeds the 65535-byte limit",
            key.len()
        )));
    }
    if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("component {i} of embedding {key}")));
    }
    Ok(())
}

/// Serialize records to EMBS bytes in canonical order.
pub fn encode_store(dim: usize, records: &[EmbeddingRecord]) -> Result<Vec<u8>> {
    if dim == 0 || dim > u32::MAX as usize {
        return Err(Error::Validation(format!("invalid embedding dimension {dim}")));
    }
    let mut sorted: Vec<&EmbeddingRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.key.as_bytes().cmp(b.key.as_bytes()));
    for w in sorted.windows(2) {
        if w[0].key == w[1].key {
            return Err(Error::Validation(format!("duplicate embedding key {}", w[0].key)));
        }
    }

    let mut buf = Vec::with_capacity(HEADER_LEN + records.len() * (dim * 4 + 16));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(sorted.len() as u64).to_le_bytes());
    for rec in sorted {
        check_record(dim, &rec.key, &rec.vector)?;
        buf.extend_from_slice(&(rec.key.len() as u16).to_le_bytes());
        buf.extend_from_slice(rec.key.as_bytes());
        for v in &rec.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_store(path: impl AsRef<Path>, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_store(dim, records)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Bounds-checked little-endian cursor; every failure reports its offset.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.offset(),
                format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.remaining()
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"EMBS\"")));
    }
    let version_at = cur.offset();
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::format(version_at, format!("unsupported version {version}")));
    }
    let dim_at = cur.offset();
    let dim = cur.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::format(dim_at, "dimension must be positive"));
    }
    let count = cur.u64("count")?;

    let mut records = BTreeMap::new();
    for i in 0..count {
        let rec_at = cur.offset();
        let key_len = cur.u16("key length")? as usize;
        let key_bytes = cur.take(key_len, "key")?;
        let key = std::str::from_utf8(key_bytes)
            .map_err(|_| Error::format(rec_at + 2, format!("record {i}: key is not UTF-8")))?
            .to_string();
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            let at = cur.offset();
            let v = cur.f32("vector component")?;
            if !v.is_finite() {
                return Err(Error::format(at, format!("non-finite component in {key}")));
            }
            vector.push(v as f64);
        }
        if records.insert(key.clone(), vector).is_some() {
            return Err(Error::format(rec_at, format!("duplicate key {key}")));
        }
    }
    if cur.remaining() != 0 {
        return Err(Error::format(
            cur.offset(),
            format!("{} trailing bytes after the declared {count} records", cur.remaining()),
        ));
    }
    Ok(EmbeddingStore { dim, records })
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}
