//! Command line entry points and the HTTP reranking service built on the
//! `personarank` library.

pub mod args;
pub mod commands;
pub mod error;
pub mod service;
