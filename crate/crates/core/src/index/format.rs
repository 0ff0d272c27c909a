//! Binary index layout, all integers and floats little-endian:
//!
//! ```text
//! magic "P4RX" | version u32 | dim u32 | item count u64
//! per item:  id len u16 | id bytes | persona count u16
//!            per persona: f32[dim] | payload len u32 | payload bytes
//!            summary f32[dim]
//! metadata len u32 | metadata JSON
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{IndexEntry, IndexError, IndexMetadata, PersonaIndex};
use crate::embedding::EmbeddingVector;
use crate::Scalar;

pub const INDEX_MAGIC: &[u8; 4] = b"P4RX";
pub const INDEX_VERSION: u32 = 1;

pub(super) fn build_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

fn put_vector<T: Scalar>(out: &mut Vec<u8>, v: &[T]) {
    for x in v {
        out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(IndexError::Truncated { offset: self.pos as u64 });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, IndexError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: usize) -> Result<String, IndexError> {
        let at = self.pos as u64;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|e| IndexError::Format { offset: at, message: e.to_string() })
    }

    fn vector<T: Scalar>(&mut self, dim: usize) -> Result<EmbeddingVector<T>, IndexError> {
        let at = self.pos as u64;
        let raw = self.take(dim * 4)?;
        let values: Vec<T> =
            raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::Format { offset: at, message: "non-finite vector component".into() });
        }
        Ok(EmbeddingVector::new(values))
    }
}

impl<T: Scalar> PersonaIndex<T> {
    /// Serialize with vectors stored as `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.item_id.len() as u16).to_le_bytes());
            out.extend_from_slice(e.item_id.as_bytes());
            out.extend_from_slice(&(e.persona_vectors.len() as u16).to_le_bytes());
            for (v, payload) in e.persona_vectors.iter().zip(&e.persona_payloads) {
                put_vector(&mut out, v);
                out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
                out.extend_from_slice(payload.as_bytes());
            }
            put_vector(&mut out, &e.summary_vector);
        }
        let meta = serde_json::to_vec(&self.metadata).expect("metadata json");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != INDEX_MAGIC {
            return Err(IndexError::Format { offset: 0, message: "bad magic, expected P4RX".into() });
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(IndexError::Format { offset: 4, message: format!("unsupported version {version}") });
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let id_len = r.u16()? as usize;
            let item_id = r.string(id_len)?;
            let k = r.u16()? as usize;
            let mut persona_vectors = Vec::with_capacity(k);
            let mut persona_payloads = Vec::with_capacity(k);
            for _ in 0..k {
                persona_vectors.push(r.vector(dim)?);
                let len = r.u32()? as usize;
                persona_payloads.push(r.string(len)?);
            }
            let summary_vector = r.vector(dim)?;
            entries.push(IndexEntry { item_id, persona_vectors, persona_payloads, summary_vector });
        }
        let meta_len = r.u32()? as usize;
        let at = r.pos as u64;
        let metadata: IndexMetadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| IndexError::Format { offset: at, message: format!("bad metadata: {e}") })?;
        if r.pos != bytes.len() {
            return Err(IndexError::Format { offset: r.pos as u64, message: "trailing bytes".into() });
        }
        PersonaIndex::from_entries(dim, entries, metadata)
    }

    /// Write to a temporary sibling and rename over `path`.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let io = |e: std::io::Error| IndexError::Io { path: path.display().to_string(), message: e.to_string() };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes =
            fs::read(path).map_err(|e| IndexError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_bytes(&bytes)
    }
}
