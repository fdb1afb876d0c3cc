//! Pronunciation scoring with linguistic-acoustic similarity.
//!
//! The crate turns phone-aligned posteriorgrams into GOP features and phone
//! level acoustic vectors, scores utterances with a hierarchical transformer
//! regressor, and supports GOP pre-training of the input embeddings.

pub mod cli;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod scorer;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
