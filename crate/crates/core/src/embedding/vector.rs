use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Dense embedding with a fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![T::zero(); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> T {
        norm(&self.0)
    }

    /// Unit-length copy. Vectors already unit length within rounding are
    /// returned unchanged so normalization is idempotent bit-for-bit. The
    /// zero vector stays zero.
    pub fn normalized(&self) -> Self {
        let mut out = self.0.clone();
        normalize_in_place(&mut out);
        Self(out)
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.0, &other.0)
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector(self.0.iter().map(|v| U::of(v.as_f64())).collect())
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self(self.0.iter().map(|v| *v * factor).collect())
    }
}

impl<T> Deref for EmbeddingVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.0
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let denom = norm(a) * norm(b);
    if denom == T::zero() {
        T::zero()
    } else {
        dot(a, b) / denom
    }
}

fn unit_tolerance<T: Scalar>(dim: usize) -> T {
    T::epsilon() * T::of_usize(4 * dim.max(1))
}

/// Scale to unit length unless already unit within rounding.
pub fn normalize_in_place<T: Scalar>(v: &mut [T]) {
    let sq = dot(v, v);
    if sq == T::zero() || (sq - T::one()).abs() <= unit_tolerance::<T>(v.len()) {
        return;
    }
    let n = sq.sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

/// Always divides by the norm. Used where the map must stay smooth, as in
/// the training objective.
pub fn unit<T: Scalar>(v: &[T]) -> (Vec<T>, T) {
    let n = norm(v);
    if n == T::zero() {
        return (v.to_vec(), n);
    }
    (v.iter().map(|x| *x / n).collect(), n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_is_idempotent() {
        let v = EmbeddingVector::new(vec![3.0f32, 4.0, 1e-3]);
        let once = v.normalized();
        assert_eq!(once.normalized(), once);
        assert!((once.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_vector_stays_zero() {
        let v = EmbeddingVector::<f64>::zeros(4);
        assert_eq!(v.normalized(), v);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn cosine_of_parallel_vectors() {
        let c = cosine(&[1.0f64, 2.0], &[2.0, 4.0]);
        assert!((c - 1.0).abs() < 1e-15);
    }
}
