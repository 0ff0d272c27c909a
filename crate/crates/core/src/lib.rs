//! Persona-profiled item indexing and reranking.
//!
//! The offline [`pipeline`] turns item metadata and reviews into item
//! summaries, review aspects, per-item personas, user profiles and a
//! judge-labelled alignment set. [`embedding`] trains a projection head on
//! that set, [`index`] stores persona vectors and reranks candidates by
//! maximum similarity, [`eval`] runs the leave-one-out protocol and
//! [`online`] serves reranking without touching the provider.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the serving precision.

pub mod config;
pub mod embedding;
pub mod eval;
pub mod index;
pub mod online;
pub mod pipeline;
mod scalar;
pub mod synthetic;
pub mod text;

pub use scalar::Scalar;

pub type Embedding = embedding::EmbeddingVector<f32>;
pub type Head = embedding::ProjectionHead<f32>;
pub type Index = index::PersonaIndex<f32>;
