//! Fixed-dimension embedding vectors keyed by view id or sample id.
//!
//! # File format
//!
//! All integers little-endian.
//!
//! ```text
//! magic    4 bytes   "VLEB"
//! version  u16       1
//! kind     u8        0 = image, 1 = text
//! dim      u32
//! count    u64
//! count × record:
//!   key_len  u16
//!   key      key_len bytes, UTF-8
//!   vector   dim × f32
//! ```
//!
//! Vectors are stored as written; normalization is left to the scorer.

use std::io::{self, Read, Write};

use indexmap::map::Entry;
use indexmap::IndexMap;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"VLEB";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8;

/// Norms below this are treated as zero by [`l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic bytes {0:?}, expected \"VLEB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown embedding kind tag {0}")]
    UnknownKind(u8),
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("truncated payload while reading {what}")]
    Truncated { what: String },
    #[error("non-finite component {index} in vector {key:?}")]
    NonFinite { key: String, index: usize },
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("key is not valid UTF-8 (record {record})")]
    InvalidKey { record: u64 },
    #[error("key {key:?} is {len} bytes, longer than the 65535-byte limit")]
    KeyTooLong { key: String, len: usize },
    #[error("vector {key:?} has {got} components, store dimension is {expected}")]
    DimMismatch {
        key: String,
        expected: usize,
        got: usize,
    },
    #[error("cannot normalize a zero vector (norm {0:e})")]
    ZeroVector(f64),
    #[error("no embedding for key {0:?}")]
    MissingKey(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingKind {
    Image,
    Text,
}

impl EmbeddingKind {
    fn tag(self) -> u8 {
        match self {
            EmbeddingKind::Image => 0,
            EmbeddingKind::Text => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(EmbeddingKind::Image),
            1 => Ok(EmbeddingKind::Text),
            t => Err(StoreError::UnknownKind(t)),
        }
    }
}

/// Keyed embedding vectors of one kind and one dimension, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    kind: EmbeddingKind,
    dim: usize,
    entries: IndexMap<String, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn new(kind: EmbeddingKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        if u32::try_from(dim).is_err() {
            return Err(StoreError::DimMismatch {
                key: String::new(),
                expected: u32::MAX as usize,
                got: dim,
            });
        }
        Ok(Self {
            kind,
            dim,
            entries: IndexMap::new(),
        })
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let key = key.into();
        if key.len() > u16::MAX as usize {
            let len = key.len();
            return Err(StoreError::KeyTooLong { key, len });
        }
        if vector.len() != self.dim {
            return Err(StoreError::DimMismatch {
                key,
                expected: self.dim,
                got: vector.len(),
            });
        }
        if let Some(index) = vector.iter().position(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite { key, index });
        }
        match self.entries.entry(key) {
            Entry::Occupied(e) => Err(StoreError::DuplicateKey(e.key().clone())),
            Entry::Vacant(e) => {
                e.insert(vector);
                Ok(())
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn require(&self, key: &str) -> Result<&[f32]> {
        self.get(key)
            .ok_or_else(|| StoreError::MissingKey(key.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Size in bytes of the encoded store.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .entries
                .keys()
                .map(|k| 2 + k.len() + 4 * self.dim)
                .sum::<usize>()
    }
}

/// Writes `store` in the binary format and returns the number of bytes written.
pub fn write_store(store: &EmbeddingStore, mut sink: impl Write) -> Result<u64> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.push(store.kind.tag());
    header.extend_from_slice(&(store.dim as u32).to_le_bytes());
    header.extend_from_slice(&(store.entries.len() as u64).to_le_bytes());
    sink.write_all(&header)?;

    let mut record = Vec::with_capacity(2 + 64 + 4 * store.dim);
    for (key, vector) in &store.entries {
        record.clear();
        record.extend_from_slice(&(key.len() as u16).to_le_bytes());
        record.extend_from_slice(key.as_bytes());
        for x in vector {
            record.extend_from_slice(&x.to_le_bytes());
        }
        sink.write_all(&record)?;
    }
    sink.flush()?;
    Ok(store.encoded_len() as u64)
}

fn read_exact_or(source: &mut impl Read, buf: &mut [u8], what: impl FnOnce() -> String) -> Result<()> {
    source.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StoreError::Truncated { what: what() },
        _ => StoreError::Io(e),
    })
}

/// Reads a store, validating every record.
pub fn read_store(mut source: impl Read) -> Result<EmbeddingStore> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_or(&mut source, &mut header[..4], || "magic".into())?;
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    read_exact_or(&mut source, &mut header[4..], || "header".into())?;
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let kind = EmbeddingKind::from_tag(header[6])?;
    let dim = u32::from_le_bytes(header[7..11].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[11..19].try_into().unwrap());

    let mut store = EmbeddingStore::new(kind, dim)?;
    let mut payload = vec![0u8; 4 * dim];
    for record in 0..count {
        let mut len = [0u8; 2];
        read_exact_or(&mut source, &mut len, || format!("key length of record {record}"))?;
        let mut key = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or(&mut source, &mut key, || format!("key of record {record}"))?;
        let key = String::from_utf8(key).map_err(|_| StoreError::InvalidKey { record })?;
        read_exact_or(&mut source, &mut payload, || format!("vector {key:?}"))?;
        let vector = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        store.insert(key, vector)?;
    }
    Ok(store)
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm.is_nan() || norm < MIN_NORM {
        return Err(StoreError::ZeroVector(norm));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    // scale first so huge or tiny components neither overflow nor underflow
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max == 0.0 || !max.is_finite() {
        return max;
    }
    max * v.iter().map(|x| (x / max).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(store: &EmbeddingStore) -> Vec<u8> {
        let mut buf = Vec::new();
        let n = write_store(store, &mut buf).unwrap();
        assert_eq!(n as usize, buf.len());
        buf
    }

    #[test]
    fn empty_store_is_header_only() {
        let store = EmbeddingStore::new(EmbeddingKind::Image, 4).unwrap();
        let buf = encode(&store);
        assert_eq!(buf.len(), HEADER_LEN);
        assert_eq!(&buf[..4], b"VLEB");
        assert_eq!(read_store(&buf[..]).unwrap(), store);
    }

    #[test]
    fn single_entry_round_trip() {
        let mut store = EmbeddingStore::new(EmbeddingKind::Text, 4).unwrap();
        store.insert("k", vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let buf = encode(&store);
        let back = read_store(&buf[..]).unwrap();
        assert_eq!(back.kind(), EmbeddingKind::Text);
        assert_eq!(back.get("k").unwrap(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(encode(&back), buf);
    }

    #[test]
    fn distinct_read_errors() {
        let mut store = EmbeddingStore::new(EmbeddingKind::Image, 2).unwrap();
        store.insert("a", vec![1.0, 2.0]).unwrap();
        store.insert("b", vec![3.0, 4.0]).unwrap();
        let good = encode(&store);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_store(&bad[..]), Err(StoreError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(read_store(&bad[..]), Err(StoreError::UnsupportedVersion(9))));

        let mut bad = good.clone();
        bad[6] = 7;
        assert!(matches!(read_store(&bad[..]), Err(StoreError::UnknownKind(7))));

        assert!(matches!(
            read_store(&good[..good.len() - 1]),
            Err(StoreError::Truncated { .. })
        ));
        assert!(matches!(read_store(&good[..10]), Err(StoreError::Truncated { .. })));

        // second record's key "b" -> "a"
        let mut bad = good.clone();
        let second_key = HEADER_LEN + 2 + 1 + 8 + 2;
        bad[second_key] = b'a';
        assert!(matches!(read_store(&bad[..]), Err(StoreError::DuplicateKey(k)) if k == "a"));

        let mut bad = good.clone();
        let first_vec = HEADER_LEN + 3;
        bad[first_vec..first_vec + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_store(&bad[..]), Err(StoreError::NonFinite { index: 0, .. })));

        let mut bad = good.clone();
        bad[HEADER_LEN + 2] = 0xff;
        assert!(matches!(read_store(&bad[..]), Err(StoreError::InvalidKey { record: 0 })));
    }

    #[test]
    fn insert_validation() {
        let mut store = EmbeddingStore::new(EmbeddingKind::Image, 2).unwrap();
        assert!(matches!(store.insert("a", vec![1.0]), Err(StoreError::DimMismatch { .. })));
        assert!(matches!(
            store.insert("a", vec![1.0, f32::INFINITY]),
            Err(StoreError::NonFinite { index: 1, .. })
        ));
        store.insert("a", vec![1.0, 1.0]).unwrap();
        assert!(matches!(store.insert("a", vec![1.0, 1.0]), Err(StoreError::DuplicateKey(_))));
        assert!(matches!(EmbeddingStore::new(EmbeddingKind::Text, 0), Err(StoreError::ZeroDim)));
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let again = l2_normalize(&v).unwrap();
        for (a, b) in v.iter().zip(&again) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(StoreError::ZeroVector(_))));
        assert!(l2_normalize(&[1e-13]).is_err());
        assert!(l2_normalize(&[]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_unit_and_scale_invariant(
            v in prop::collection::vec(-1e3f64..1e3, 1..32),
            c in 1e-3f64..1e3,
        ) {
            prop_assume!(l2_norm(&v) >= 1e-6);
            let n = l2_normalize(&v).unwrap();
            prop_assert!((l2_norm(&n) - 1.0).abs() < 1e-9);
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let ns = l2_normalize(&scaled).unwrap();
            for (a, b) in n.iter().zip(&ns) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn bytes_round_trip(
            dim in 1usize..16,
            raw in prop::collection::vec((any::<u32>(), "[a-z0-9_/]{0,12}"), 0..20),
        ) {
            let mut store = EmbeddingStore::new(EmbeddingKind::Image, dim).unwrap();
            for (i, (bits, key)) in raw.iter().enumerate() {
                let v = (0..dim)
                    .map(|j| {
                        let x = f32::from_bits(bits.rotate_left(j as u32));
                        if x.is_finite() { x } else { j as f32 }
                    })
                    .collect();
                store.insert(format!("{key}#{i}"), v).unwrap();
            }
            let buf = encode(&store);
            let back = read_store(&buf[..]).unwrap();
            prop_assert_eq!(encode(&back), buf);
            for ((ka, va), (kb, vb)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(ka, kb);
                let bits_a: Vec<u32> = va.iter().map(|x| x.to_bits()).collect();
                let bits_b: Vec<u32> = vb.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
