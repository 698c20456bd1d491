//! Token-classification prompt compression.
//!
//! A small bidirectional transformer encoder labels every word of a prompt as
//! preserve or discard. Training adds an inter-class cosine similarity penalty
//! on the last-layer representations to counter over-smoothing. At compression
//! time the classifier probability is fused with a per-class Z-score outlier
//! score and the top-scoring tokens are kept in their original order.

pub mod compressor;
pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
