//! Disaster tweet classification: text cleansing, frequency and embedding
//! vectorizers, linear baselines, a small transformer encoder, and the
//! metrics used to compare them.

pub mod classify;
pub mod cleanse;
pub mod container;
pub mod corpus_io;
pub mod embed;
pub mod encoder;
pub mod eval;
pub mod optimize;
pub mod pipeline;
pub mod synthetic;
pub mod vectorize;
