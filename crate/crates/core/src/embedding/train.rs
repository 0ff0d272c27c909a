use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::{decay_weights, interaction_text};
use super::infonce::{infonce_grad, HeadExample};
use super::{embed, EmbeddingError, ProjectionHead, TextEmbedder};
use crate::pipeline::{serialize_persona, AlignmentRecord, PersonaSet, UserProfile};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Softmax temperature, > 0.
    pub tau: f64,
    /// Rows per batch, >= 2.
    pub batch_size: usize,
    pub epochs: usize,
    /// Plain gradient-descent step size.
    pub learning_rate: f64,
    /// Recency decay, in (0, 1].
    pub gamma: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { tau: 0.05, batch_size: 64, epochs: 10, learning_rate: 0.05, gamma: 0.8, seed: 0 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(EmbeddingError::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(EmbeddingError::InvalidConfig(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if self.batch_size < 2 {
            return Err(EmbeddingError::InvalidConfig(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(EmbeddingError::InvalidConfig(format!("bad learning_rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Raw (pre-head) embeddings for one alignment record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub user_id: String,
    pub item_id: String,
    /// Interaction embeddings, most recent first.
    pub interactions: Vec<Vec<f64>>,
    pub persona: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub examples: Vec<TrainingExample>,
    /// `(user/item, reason)` for records that could not be used.
    pub skipped: Vec<(String, String)>,
}

/// Resolve alignment records into raw embeddings. The user side is the
/// stored profile with the target item's own entry removed, so the head
/// never sees the positive item's summary on the user tower.
pub fn build_training_set(
    records: &[AlignmentRecord],
    profiles: &HashMap<String, UserProfile>,
    personas: &HashMap<String, PersonaSet>,
    embedder: &dyn TextEmbedder,
) -> Result<TrainingSet, EmbeddingError> {
    let mut cache: HashMap<String, Vec<f64>> = HashMap::new();
    let mut raw = |text: String| -> Result<Vec<f64>, EmbeddingError> {
        if let Some(v) = cache.get(&text) {
            return Ok(v.clone());
        }
        let v = embed::<f64>(embedder, &text)?.into_inner();
        cache.insert(text, v.clone());
        Ok(v)
    };
    let mut set = TrainingSet::default();
    for r in records {
        let key = format!("{}/{}", r.user_id, r.item_id);
        let profile = profiles
            .get(&r.user_id)
            .ok_or_else(|| EmbeddingError::UnresolvedReference(format!("no profile for user {}", r.user_id)))?;
        let persona = personas.get(&r.item_id).and_then(|s| s.personas.get(r.persona_index)).ok_or_else(|| {
            EmbeddingError::UnresolvedReference(format!("persona {} of item {}", r.persona_index, r.item_id))
        })?;
        let entries: Vec<_> = profile.entries.iter().filter(|e| e.item_id != r.item_id).collect();
        if entries.is_empty() {
            set.skipped.push((key, "no history besides the target item".into()));
            continue;
        }
        let interactions = entries
            .iter()
            .map(|e| raw(interaction_text(&e.summary, e.aspect.as_ref())))
            .collect::<Result<Vec<_>, _>>()?;
        set.examples.push(TrainingExample {
            user_id: r.user_id.clone(),
            item_id: r.item_id.clone(),
            interactions,
            persona: raw(serialize_persona(persona))?,
        });
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss over the epoch's batches, each measured before its update.
    pub mean_loss: f64,
    pub batches: usize,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub examples: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.mean_loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

fn to_head_example<T: Scalar>(ex: &TrainingExample, gamma: f64) -> HeadExample<T> {
    let cast = |v: &Vec<f64>| v.iter().map(|x| T::of(*x)).collect::<Vec<T>>();
    HeadExample {
        interactions: ex.interactions.iter().map(cast).collect(),
        weights: decay_weights(ex.interactions.len(), gamma).into_iter().map(T::of).collect(),
        persona: cast(&ex.persona),
    }
}

/// Plain gradient descent on the head with seeded per-epoch shuffling.
/// Serial and deterministic for a given seed.
pub fn train_alignment<T: Scalar>(
    set: &TrainingSet,
    config: &TrainingConfig,
    init: ProjectionHead<T>,
) -> Result<(ProjectionHead<T>, TrainingLog), EmbeddingError> {
    config.validate()?;
    if set.examples.is_empty() {
        return Err(EmbeddingError::EmptyDataset);
    }
    let d = init.dim();
    let rows: Vec<HeadExample<T>> = set.examples.iter().map(|e| to_head_example(e, config.gamma)).collect();
    if let Some(bad) = rows.iter().find(|r| r.persona.len() != d) {
        return Err(EmbeddingError::DimensionMismatch { expected: d, found: bad.persona.len() });
    }
    let mut head = init.with_config(config.tau, config.gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let lr = T::of(config.learning_rate);
    let mut log = TrainingLog { examples: rows.len(), epochs: Vec::with_capacity(config.epochs) };
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        let mut skipped = 0;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let first = &set.examples[chunk[0]].persona;
            if chunk.iter().all(|&i| &set.examples[i].persona == first) {
                log::warn!("epoch {epoch}: skipping batch whose positives are all identical");
                skipped += 1;
                continue;
            }
            let batch: Vec<HeadExample<T>> = chunk.iter().map(|&i| rows[i].clone()).collect();
            let (loss, grad) = infonce_grad(&head, &batch, config.tau)?;
            for (w, g) in head.weights_mut().iter_mut().zip(&grad) {
                *w -= lr * *g;
            }
            total += loss.as_f64();
            batches += 1;
        }
        let mean_loss = if batches == 0 { 0.0 } else { total / batches as f64 };
        log::info!("epoch {epoch}: loss {mean_loss:.6} over {batches} batches");
        log.epochs.push(EpochLog { epoch, mean_loss, batches, skipped_batches: skipped });
    }
    head.trained = true;
    Ok((head, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(i: usize, d: usize) -> TrainingExample {
        let mut x = vec![0.1; d];
        x[i % d] = 1.0;
        let mut p = vec![0.0; d];
        p[i % d] = 1.0;
        p[(i + 1) % d] = 0.5;
        TrainingExample { user_id: format!("u{i}"), item_id: format!("i{i}"), interactions: vec![x], persona: p }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_weights() {
        let set = TrainingSet { examples: (0..8).map(|i| example(i, 4)).collect(), skipped: vec![] };
        let cfg = TrainingConfig { epochs: 1, learning_rate: 0.0, batch_size: 4, ..Default::default() };
        let init = ProjectionHead::<f64>::identity(4);
        let (head, log) = train_alignment(&set, &cfg, init.clone()).unwrap();
        assert_eq!(head.weights(), init.weights());
        assert!(head.trained);
        assert_eq!(log.epochs.len(), 1);
    }

    #[test]
    fn same_seed_same_weights() {
        let set = TrainingSet { examples: (0..10).map(|i| example(i, 4)).collect(), skipped: vec![] };
        let cfg = TrainingConfig { epochs: 3, batch_size: 4, seed: 9, ..Default::default() };
        let a = train_alignment(&set, &cfg, ProjectionHead::<f32>::identity(4)).unwrap().0;
        let b = train_alignment(&set, &cfg, ProjectionHead::<f32>::identity(4)).unwrap().0;
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn identical_positive_batches_are_skipped() {
        let mut examples: Vec<_> = (0..4).map(|i| example(i, 4)).collect();
        for e in &mut examples {
            e.persona = vec![1.0, 0.0, 0.0, 0.0];
        }
        let set = TrainingSet { examples, skipped: vec![] };
        let cfg = TrainingConfig { epochs: 1, batch_size: 4, ..Default::default() };
        let (head, log) = train_alignment(&set, &cfg, ProjectionHead::<f64>::identity(4)).unwrap();
        assert_eq!(log.epochs[0].skipped_batches, 1);
        assert!(head.is_identity());
    }

    #[test]
    fn config_is_validated() {
        let bad = [
            TrainingConfig { tau: 0.0, ..Default::default() },
            TrainingConfig { gamma: 0.0, ..Default::default() },
            TrainingConfig { gamma: 1.5, ..Default::default() },
            TrainingConfig { batch_size: 1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(EmbeddingError::InvalidConfig(_))));
        }
        assert!(matches!(
            train_alignment(&TrainingSet::default(), &TrainingConfig::default(), ProjectionHead::<f64>::identity(2)),
            Err(EmbeddingError::EmptyDataset)
        ));
    }
}
