//! Linear projection head applied on top of the frozen embedder, and its
//! binary file format.
//!
//! Layout: magic `P4RH`, version `u32`, dim `u32`, `dim * dim` little-endian
//! `f32` weights in row-major order, then `tau` and `gamma` as `f64`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EmbeddingError, EmbeddingVector};
use crate::Scalar;

pub const HEAD_MAGIC: &[u8; 4] = b"P4RH";
pub const HEAD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<T> {
    dim: usize,
    /// Row-major `dim x dim`.
    weight: Vec<T>,
    pub trained: bool,
    /// Training temperature echoed into the head file.
    pub tau: f64,
    /// Decay factor echoed into the head file; used again at inference.
    pub gamma: f64,
}

impl<T: Scalar> ProjectionHead<T> {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![T::zero(); dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = T::one();
        }
        Self { dim, weight, trained: false, tau: 0.05, gamma: 0.8 }
    }

    pub fn from_weights(dim: usize, weight: Vec<T>) -> Result<Self, EmbeddingError> {
        if weight.len() != dim * dim {
            return Err(EmbeddingError::DimensionMismatch { expected: dim * dim, found: weight.len() });
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self { dim, weight, trained: false, tau: 0.05, gamma: 0.8 })
    }

    pub fn with_config(mut self, tau: f64, gamma: f64) -> Self {
        self.tau = tau;
        self.gamma = gamma;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weight
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weight
    }

    pub fn is_identity(&self) -> bool {
        self.weight.iter().enumerate().all(|(k, w)| {
            let expected = if k / self.dim == k % self.dim { T::one() } else { T::zero() };
            *w == expected
        })
    }

    /// `W x` without normalization.
    pub fn project(&self, x: &[T]) -> Result<Vec<T>, EmbeddingError> {
        if x.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        Ok(self.project_unchecked(x))
    }

    pub(crate) fn project_unchecked(&self, x: &[T]) -> Vec<T> {
        self.weight
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).fold(T::zero(), |acc, (w, v)| acc + *w * *v))
            .collect()
    }

    /// Project then normalize to unit length.
    pub fn apply(&self, x: &EmbeddingVector<T>) -> Result<EmbeddingVector<T>, EmbeddingError> {
        Ok(EmbeddingVector::new(self.project(x)?).normalized())
    }

    pub fn cast<U: Scalar>(&self) -> ProjectionHead<U> {
        ProjectionHead {
            dim: self.dim,
            weight: self.weight.iter().map(|w| U::of(w.as_f64())).collect(),
            trained: self.trained,
            tau: self.tau,
            gamma: self.gamma,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.weight.len() * 4 + 16);
        out.extend_from_slice(HEAD_MAGIC);
        out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for w in &self.weight {
            out.extend_from_slice(&(w.as_f64() as f32).to_le_bytes());
        }
        out.extend_from_slice(&self.tau.to_le_bytes());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EmbeddingError> {
        let take = |offset: usize, len: usize| {
            bytes.get(offset..offset + len).ok_or(EmbeddingError::Truncated { offset: offset as u64 })
        };
        if take(0, 4)? != HEAD_MAGIC {
            return Err(EmbeddingError::Format { offset: 0, message: "bad magic, expected P4RH".into() });
        }
        let version = u32::from_le_bytes(take(4, 4)?.try_into().expect("4 bytes"));
        if version != HEAD_VERSION {
            return Err(EmbeddingError::Format { offset: 4, message: format!("unsupported version {version}") });
        }
        let dim = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes")) as usize;
        let mut offset = 12;
        let mut weight = Vec::with_capacity(dim * dim);
        for _ in 0..dim * dim {
            let w = f32::from_le_bytes(take(offset, 4)?.try_into().expect("4 bytes"));
            weight.push(T::of(f64::from(w)));
            offset += 4;
        }
        let tau = f64::from_le_bytes(take(offset, 8)?.try_into().expect("8 bytes"));
        let gamma = f64::from_le_bytes(take(offset + 8, 8)?.try_into().expect("8 bytes"));
        if offset + 16 != bytes.len() {
            return Err(EmbeddingError::Format {
                offset: (offset + 16) as u64,
                message: "trailing bytes after head".into(),
            });
        }
        let mut head = Self::from_weights(dim, weight)?.with_config(tau, gamma);
        head.trained = !head.is_identity();
        Ok(head)
    }

    /// SHA-256 of the serialized head, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
