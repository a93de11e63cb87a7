//! Visual grounding of pre-trained word embeddings.
//!
//! A single linear map `M` (d×c) is trained jointly with three tasks over
//! image–caption pairs: a forward and a backward image-conditioned GRU
//! language model that decode through the tied transpose `Mᵀ·T_eᵀ`, and an
//! image–sentence matcher. After training, `M` is applied zero-shot to any
//! pre-trained embedding table to produce grounded vectors, which the
//! [`eval`] module scores on word-similarity and STS benchmarks.
//!
//! Layout:
//! - [`corpus`]: file loaders, tokenizer, vocabulary, batching with negative mining
//! - [`numerics`]: tensors, a small reverse-mode tape, GRU, batch norm, losses, NAdam
//! - [`model`]: the three-task model, regularizer and training loop
//! - [`grounding`]: zero-shot full-vocabulary mapping and export
//! - [`eval`]: intrinsic/extrinsic evaluators and neighbor queries
//! - [`synthetic`]: planted-structure corpora for smoke tests and gradient checks

pub mod corpus;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod model;
pub mod numerics;
pub mod synthetic;

pub use error::{Error, Result};
