//! InfoNCE over in-batch negatives and its analytic gradient with respect to
//! the projection head.

use super::vector::{dot, unit};
use super::{EmbeddingError, EmbeddingVector, ProjectionHead};
use crate::Scalar;

/// Already-encoded, unit-norm user and positive persona vectors, row aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch<T> {
    pub user_vectors: Vec<EmbeddingVector<T>>,
    pub positive_vectors: Vec<EmbeddingVector<T>>,
}

impl<T: Scalar> TrainBatch<T> {
    fn check(&self) -> Result<usize, EmbeddingError> {
        let b = self.user_vectors.len();
        if b != self.positive_vectors.len() {
            return Err(EmbeddingError::DimensionMismatch { expected: b, found: self.positive_vectors.len() });
        }
        if b < 2 {
            return Err(EmbeddingError::InvalidConfig(format!("batch size {b} < 2")));
        }
        let d = self.user_vectors[0].dim();
        for v in self.user_vectors.iter().chain(&self.positive_vectors) {
            if v.dim() != d {
                return Err(EmbeddingError::DimensionMismatch { expected: d, found: v.dim() });
            }
        }
        Ok(b)
    }
}

/// Row losses `logsumexp_j(S_bj) - S_bb` and the softmax of each row.
fn rows<T: Scalar>(sims: &[Vec<T>]) -> (Vec<T>, Vec<Vec<T>>) {
    let mut losses = Vec::with_capacity(sims.len());
    let mut probs = Vec::with_capacity(sims.len());
    for (b, row) in sims.iter().enumerate() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|s| (*s - m).exp()).collect();
        let z: T = exps.iter().copied().sum();
        losses.push(m + z.ln() - row[b]);
        probs.push(exps.into_iter().map(|e| e / z).collect());
    }
    (losses, probs)
}

fn finite<T: Scalar>(v: T) -> Result<T, EmbeddingError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EmbeddingError::NonFinite)
    }
}

/// Mean InfoNCE loss. Similarities are plain dot products, so inputs should
/// be unit length.
pub fn infonce_loss<T: Scalar>(batch: &TrainBatch<T>, tau: f64) -> Result<T, EmbeddingError> {
    let b = batch.check()?;
    let inv_tau = T::of(1.0 / tau);
    let sims: Vec<Vec<T>> = batch
        .user_vectors
        .iter()
        .map(|u| batch.positive_vectors.iter().map(|p| u.dot(p) * inv_tau).collect())
        .collect();
    let (losses, _) = rows(&sims);
    finite(losses.into_iter().sum::<T>() / T::of_usize(b))
}

/// One training row before the head: raw interaction embeddings (most recent
/// first) with their decay weights, and the raw embedding of the positive
/// persona.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadExample<T> {
    pub interactions: Vec<Vec<T>>,
    pub weights: Vec<T>,
    pub persona: Vec<T>,
}

pub type HeadBatch<T> = [HeadExample<T>];

struct Forward<T> {
    /// Per row, per interaction: (unit projection, projection norm).
    z: Vec<Vec<(Vec<T>, T)>>,
    /// Per row: (unit user vector, norm of the weighted sum).
    u: Vec<(Vec<T>, T)>,
    /// Per row: (unit persona vector, projection norm).
    v: Vec<(Vec<T>, T)>,
    losses: Vec<T>,
    probs: Vec<Vec<T>>,
}

fn forward<T: Scalar>(head: &ProjectionHead<T>, batch: &HeadBatch<T>, tau: f64) -> Result<Forward<T>, EmbeddingError> {
    if batch.len() < 2 {
        return Err(EmbeddingError::InvalidConfig(format!("batch size {} < 2", batch.len())));
    }
    let d = head.dim();
    let mut z = Vec::with_capacity(batch.len());
    let mut u = Vec::with_capacity(batch.len());
    let mut v = Vec::with_capacity(batch.len());
    for ex in batch {
        if ex.interactions.is_empty() {
            return Err(EmbeddingError::EmptyList);
        }
        if ex.persona.len() != d {
            return Err(EmbeddingError::DimensionMismatch { expected: d, found: ex.persona.len() });
        }
        let mut zs = Vec::with_capacity(ex.interactions.len());
        let mut s = vec![T::zero(); d];
        for (x, w) in ex.interactions.iter().zip(&ex.weights) {
            if x.len() != d {
                return Err(EmbeddingError::DimensionMismatch { expected: d, found: x.len() });
            }
            let (zl, n) = unit(&head.project_unchecked(x));
            for (a, zi) in s.iter_mut().zip(&zl) {
                *a += *w * *zi;
            }
            zs.push((zl, n));
        }
        z.push(zs);
        u.push(unit(&s));
        v.push(unit(&head.project_unchecked(&ex.persona)));
    }
    let inv_tau = T::of(1.0 / tau);
    let sims: Vec<Vec<T>> = u.iter().map(|(ub, _)| v.iter().map(|(vj, _)| dot(ub, vj) * inv_tau).collect()).collect();
    let (losses, probs) = rows(&sims);
    Ok(Forward { z, u, v, losses, probs })
}

/// Loss of a raw batch under `head`; the function `infonce_grad` differentiates.
pub fn head_batch_loss<T: Scalar>(
    head: &ProjectionHead<T>,
    batch: &HeadBatch<T>,
    tau: f64,
) -> Result<T, EmbeddingError> {
    let f = forward(head, batch, tau)?;
    finite(f.losses.iter().copied().sum::<T>() / T::of_usize(batch.len()))
}

/// Back-propagate `g` through `y -> y / |y|` given the unit output and norm.
fn normalize_backward<T: Scalar>(unit_y: &[T], n: T, g: &[T]) -> Vec<T> {
    if n == T::zero() {
        return vec![T::zero(); g.len()];
    }
    let proj = dot(unit_y, g);
    unit_y.iter().zip(g).map(|(y, gi)| (*gi - *y * proj) / n).collect()
}

/// Accumulate the outer product `dy x^T` into the row-major gradient.
fn add_outer<T: Scalar>(grad: &mut [T], dy: &[T], x: &[T]) {
    let d = x.len();
    for (i, gi) in dy.iter().enumerate() {
        if *gi == T::zero() {
            continue;
        }
        for (g, xj) in grad[i * d..(i + 1) * d].iter_mut().zip(x) {
            *g += *gi * *xj;
        }
    }
}

/// Loss and gradient of the mean batch loss with respect to the head weight
/// (row-major, same layout as [`ProjectionHead::weights`]).
pub fn infonce_grad<T: Scalar>(
    head: &ProjectionHead<T>,
    batch: &HeadBatch<T>,
    tau: f64,
) -> Result<(T, Vec<T>), EmbeddingError> {
    let f = forward(head, batch, tau)?;
    let b = batch.len();
    let d = head.dim();
    let scale = T::of(1.0 / tau) / T::of_usize(b);
    // dL/dS_bj = (P_bj - [b == j]) / B; S = u.v / tau.
    let coeff: Vec<Vec<T>> = f
        .probs
        .iter()
        .enumerate()
        .map(|(bi, row)| {
            row.iter().enumerate().map(|(j, p)| (*p - if bi == j { T::one() } else { T::zero() }) * scale).collect()
        })
        .collect();

    let mut grad = vec![T::zero(); d * d];
    for (bi, ex) in batch.iter().enumerate() {
        let mut gu = vec![T::zero(); d];
        for (j, (vj, _)) in f.v.iter().enumerate() {
            let c = coeff[bi][j];
            for (g, x) in gu.iter_mut().zip(vj) {
                *g += c * *x;
            }
        }
        let (ub, sn) = &f.u[bi];
        let gs = normalize_backward(ub, *sn, &gu);
        for ((x, w), (zl, zn)) in ex.interactions.iter().zip(&ex.weights).zip(&f.z[bi]) {
            let gz: Vec<T> = gs.iter().map(|g| *g * *w).collect();
            add_outer(&mut grad, &normalize_backward(zl, *zn, &gz), x);
        }
    }
    for (j, ex) in batch.iter().enumerate() {
        let mut gv = vec![T::zero(); d];
        for (bi, (ub, _)) in f.u.iter().enumerate() {
            let c = coeff[bi][j];
            for (g, x) in gv.iter_mut().zip(ub) {
                *g += c * *x;
            }
        }
        let (vj, vn) = &f.v[j];
        add_outer(&mut grad, &normalize_backward(vj, *vn, &gv), &ex.persona);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    let loss = finite(f.losses.iter().copied().sum::<T>() / T::of_usize(b))?;
    Ok((loss, grad))
}
