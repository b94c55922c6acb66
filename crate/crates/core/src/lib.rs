//! Spoken-language dementia screening features: class-conditional N-gram
//! perplexities, GMM-UBM/i-vector and TDNN x-vector embeddings, fused and
//! classified by a linear SVM under leakage-safe cross-validation.

mod codec;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod fusion;
pub mod gmm;
pub mod ivector;
pub mod ngram;
pub mod synth;
pub mod xvector;

pub use error::{Error, Result};
