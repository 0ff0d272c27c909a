use super::{embed, EmbeddingError, EmbeddingVector, ProjectionHead, TextEmbedder};
use crate::pipeline::{serialize_persona, AspectTuple, PersonaRecord, ProfileEntry};
use crate::Scalar;

/// Embed arbitrary text, project through the head and normalize.
pub fn encode_text<T: Scalar>(
    text: &str,
    embedder: &dyn TextEmbedder,
    head: &ProjectionHead<T>,
) -> Result<EmbeddingVector<T>, EmbeddingError> {
    if embedder.dim() != head.dim() {
        return Err(EmbeddingError::DimensionMismatch { expected: head.dim(), found: embedder.dim() });
    }
    head.apply(&embed(embedder, text)?)
}

/// `{summary}\n{slot lines}`, or the summary alone when no slot is filled.
pub fn interaction_text(summary: &str, aspect: Option<&AspectTuple>) -> String {
    match aspect.map(AspectTuple::to_text) {
        Some(slots) if !slots.is_empty() => format!("{summary}\n{slots}"),
        _ => summary.to_string(),
    }
}

pub fn encode_interaction<T: Scalar>(
    summary: &str,
    aspect: Option<&AspectTuple>,
    embedder: &dyn TextEmbedder,
    head: &ProjectionHead<T>,
) -> Result<EmbeddingVector<T>, EmbeddingError> {
    encode_text(&interaction_text(summary, aspect), embedder, head)
}

pub fn encode_persona<T: Scalar>(
    persona: &PersonaRecord,
    embedder: &dyn TextEmbedder,
    head: &ProjectionHead<T>,
) -> Result<EmbeddingVector<T>, EmbeddingError> {
    encode_text(&serialize_persona(persona), embedder, head)
}

/// Normalized decay weights `gamma^(l-1) / sum` for `n` entries.
pub fn decay_weights(n: usize, gamma: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|l| gamma.powi(l as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Decay-weighted mean of entry vectors, most recent first. The result is
/// not normalized.
pub fn aggregate_user<T: Scalar>(
    vectors: &[EmbeddingVector<T>],
    gamma: f64,
) -> Result<EmbeddingVector<T>, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::EmptyList)?;
    let dim = first.dim();
    let g = T::of(gamma);
    let mut acc = vec![T::zero(); dim];
    let mut total = T::zero();
    let mut w = T::one();
    for v in vectors {
        if v.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch { expected: dim, found: v.dim() });
        }
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += w * *x;
        }
        total += w;
        w *= g;
    }
    Ok(EmbeddingVector::new(acc.into_iter().map(|a| a / total).collect()))
}

/// Unit user vector from profile entries (most recent first).
pub fn user_embedding<T: Scalar>(
    entries: &[ProfileEntry],
    embedder: &dyn TextEmbedder,
    head: &ProjectionHead<T>,
) -> Result<EmbeddingVector<T>, EmbeddingError> {
    let vectors = entries
        .iter()
        .map(|e| encode_interaction(&e.summary, e.aspect.as_ref(), embedder, head))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_user(&vectors, head.gamma)?.normalized())
}
