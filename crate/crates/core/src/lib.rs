//! Embedding, extraction and verification of multi-bit black-box watermarks
//! in node-level graph neural networks.
//!
//! A watermark bit lives in the sign of an edge's *distance difference*: the
//! cosine similarity of the two endpoints' standardized log-probabilities
//! minus the cosine similarity of their input features. The owner picks a
//! fixed set of trigger-graph edges (the key), fine-tunes a copy of the model
//! until those signs spell the distribution's bit string, and later recovers
//! the string from a suspect model with a single prediction query.

pub mod attack;
pub mod autodiff;
pub mod collision;
pub mod embed;
pub mod error;
pub mod gnn;
pub mod gradcheck;
pub mod graph;
pub mod ldde;
pub mod optim;
pub mod rarity;
pub mod rng;
pub mod sweep;
pub mod tensor;
pub mod verify;
pub mod watermark;

pub use error::{Error, Result};
pub use tensor::Matrix;
