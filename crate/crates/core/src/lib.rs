//! Dense passage retrieval with an attentive relevance scoring head.
//!
//! The crate covers the whole pipeline: hashed-feature dual encoders,
//! the scoring head and its training objective, AdamW training, binary
//! checkpoints and embedding indexes, exhaustive top-k retrieval, lexical
//! baselines and top-k accuracy evaluation, plus synthetic data generators.

pub mod ars;
pub mod datasets;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod numerics;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, Result};
