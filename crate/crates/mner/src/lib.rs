//! Multimodal named-entity recognition with modality attention.
//!
//! A from-scratch sequence labeler that fuses word, character, and visual
//! channels per token through a learned attention over modalities, encodes
//! the fused contexts with a bidirectional LSTM, and decodes label
//! sequences with a linear-chain CRF. Includes training (Adagrad),
//! span-level evaluation, a synthetic multimodal corpus generator, and a
//! binary model format.

pub mod chars;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod crf;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod fusion;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod params;
pub mod serialize;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
