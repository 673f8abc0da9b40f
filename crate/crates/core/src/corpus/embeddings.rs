//! Binary embedding stores.
//!
//! Layout (little-endian): magic `CFE1`, u32 version (1), u32 dim, u64 count,
//! then `count` records of u16 id length, UTF-8 id bytes, `dim` f32 values.
//! Image and text vectors live in separate files.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CFE1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vec: &[f32]) -> Result<()> {
        let id = id.into();
        if vec.len() != self.dim {
            return Err(Error::Embedding(format!(
                "vector for {id} has length {}, store dim is {}",
                vec.len(),
                self.dim
            )));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::Embedding(format!("id too long: {} bytes", id.len())));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Embedding(format!("duplicate id {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vec);
        Ok(())
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

    /// Absent ids return `None`; that is not an error.
    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), &self.data[i * self.dim..(i + 1) * self.dim]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Embedding("magic mismatch".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Embedding("truncated header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Embedding(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());

        let mut store = EmbeddingStore::new(dim);
        let mut pos = HEADER_LEN;
        let mut vec = vec![0f32; dim];
        for record in 1..=count {
            let truncated = || Error::Embedding(format!("truncated at record {record}"));
            let id_len = bytes
                .get(pos..pos + 2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
                .ok_or_else(truncated)?;
            pos += 2;
            let id_bytes = bytes.get(pos..pos + id_len).ok_or_else(truncated)?;
            let id = std::str::from_utf8(id_bytes)
                .map_err(|_| Error::Embedding(format!("record {record}: id is not UTF-8")))?
                .to_string();
            pos += id_len;
            let raw = bytes.get(pos..pos + dim * 4).ok_or_else(truncated)?;
            for (v, chunk) in vec.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            pos += dim * 4;
            if store.index.contains_key(&id) {
                return Err(Error::Embedding(format!("duplicate id {id}")));
            }
            store.insert(id, &vec)?;
        }
        if pos != bytes.len() {
            return Err(Error::Embedding(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - pos
            )));
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4 + self.ids.len() * 18);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, vec) in self.iter() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in vec {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn write_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    super::write_bytes(path.as_ref(), &store.to_bytes())
}

/// Per-sample view across the image and text stores.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub sample_id: String,
    pub image_vec: Option<Vec<f32>>,
    pub text_vec: Option<Vec<f32>>,
}

/// Image and text stores for one corpus. Either may be absent.
#[derive(Debug, Clone, Default)]
pub struct Embeddings {
    pub image: Option<EmbeddingStore>,
    pub text: Option<EmbeddingStore>,
}

impl Embeddings {
    pub fn load(image: Option<&Path>, text: Option<&Path>) -> Result<Self> {
        Ok(Self {
            image: image.map(EmbeddingStore::load).transpose()?,
            text: text.map(EmbeddingStore::load).transpose()?,
        })
    }

    pub fn image_vec(&self, id: &str) -> Option<&[f32]> {
        self.image.as_ref().and_then(|s| s.get(id))
    }

    pub fn text_vec(&self, id: &str) -> Option<&[f32]> {
        self.text.as_ref().and_then(|s| s.get(id))
    }

    pub fn record(&self, id: &str) -> Option<EmbeddingRecord> {
        let image_vec = self.image_vec(id).map(<[f32]>::to_vec);
        let text_vec = self.text_vec(id).map(<[f32]>::to_vec);
        if image_vec.is_none() && text_vec.is_none() {
            return None;
        }
        Some(EmbeddingRecord {
            sample_id: id.to_string(),
            image_vec,
            text_vec,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_records() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(4);
        s.insert("a", &[1.0, 2.0, 3.0, 4.0]).unwrap();
        s.insert("b", &[0.5, -0.5, 0.0, 1e-3]).unwrap();
        s
    }

    #[test]
    fn round_trip_two_records() {
        let store = two_records();
        let back = EmbeddingStore::from_bytes(&store.to_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("a").unwrap(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(back.get("b").unwrap().len(), 4);
        assert_eq!(back, store);
    }

    #[test]
    fn unknown_id_is_absent() {
        assert!(two_records().get("zzz").is_none());
    }

    #[test]
    fn truncated_final_record() {
        let bytes = two_records().to_bytes();
        let err = EmbeddingStore::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert_eq!(err.to_string(), "embedding store: truncated at record 2");
    }

    #[test]
    fn magic_mismatch() {
        let mut bytes = two_records().to_bytes();
        bytes[0] = b'X';
        let err = EmbeddingStore::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic mismatch"));
    }

    #[test]
    fn duplicate_id_in_file() {
        let store = two_records();
        let mut bytes = store.to_bytes();
        // Rewrite count to 3 and append a copy of record "a".
        bytes[12..20].copy_from_slice(&3u64.to_le_bytes());
        let rec_len = 2 + 1 + 16;
        let first = bytes[HEADER_LEN..HEADER_LEN + rec_len].to_vec();
        bytes.extend_from_slice(&first);
        let err = EmbeddingStore::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("duplicate id a"));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let bytes = two_records().to_bytes();
        assert_eq!(&bytes[..4], b"CFE1");
        assert_eq!(bytes[4..8], [1, 0, 0, 0]);
        assert_eq!(bytes[8..12], [4, 0, 0, 0]);
        assert_eq!(bytes[12..20], [2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(bytes[20..22], [1, 0]);
        assert_eq!(bytes[22], b'a');
    }

    #[test]
    fn wrong_dim_rejected() {
        let mut s = EmbeddingStore::new(3);
        assert!(s.insert("a", &[1.0]).is_err());
    }
}
