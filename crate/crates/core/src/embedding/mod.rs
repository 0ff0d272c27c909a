//! Text embedding, the trainable projection head, contrastive training and
//! user aggregation.

mod embedder;
mod encode;
mod head;
mod infonce;
mod train;
mod vector;

use thiserror::Error;

pub use embedder::{
    embed, CachedEmbedder, HashEmbedder, HttpEmbedder, HttpEmbedderConfig, TextEmbedder, DEFAULT_HASH_DIM,
};
pub use encode::{
    aggregate_user, decay_weights, encode_interaction, encode_persona, encode_text, interaction_text, user_embedding,
};
pub use head::{ProjectionHead, HEAD_MAGIC, HEAD_VERSION};
pub use infonce::{head_batch_loss, infonce_grad, infonce_loss, HeadBatch, HeadExample, TrainBatch};
pub use train::{
    build_training_set, train_alignment, EpochLog, TrainingConfig, TrainingExample, TrainingLog, TrainingSet,
};
pub use vector::{cosine, dot, norm, normalize_in_place, unit, EmbeddingVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot aggregate an empty list of vectors")]
    EmptyList,
    #[error("non-finite value")]
    NonFinite,
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("file truncated at byte {offset}")]
    Truncated { offset: u64 },
    #[error("io error: {0}")]
    Io(String),
    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
}

impl From<std::io::Error> for EmbeddingError {
    fn from(e: std::io::Error) -> Self {
        EmbeddingError::Io(e.to_string())
    }
}
